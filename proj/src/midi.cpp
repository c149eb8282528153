#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <fstream>
#include <iterator>

#include "emodiff/music.hpp"

namespace emodiff::music {

namespace {

constexpr int kTicksPerQuarter = 480;
constexpr std::uint8_t kVelocity = 80;

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::size_t pos() const { return pos_; }
    void seek(std::size_t p) { pos_ = p; }
    bool at_end() const { return pos_ >= bytes_.size(); }

    void need(std::size_t n, const char* what) const {
        if (pos_ + n > bytes_.size())
            throw MidiError(std::string("truncated ") + what, pos_);
    }
    std::uint8_t u8(const char* what = "event") {
        need(1, what);
        return bytes_[pos_++];
    }
    std::uint8_t peek(const char* what = "event") const {
        need(1, what);
        return bytes_[pos_];
    }
    std::uint32_t be(int n, const char* what) {
        need(static_cast<std::size_t>(n), what);
        std::uint32_t v = 0;
        for (int i = 0; i < n; ++i) v = (v << 8) | bytes_[pos_++];
        return v;
    }
    std::uint32_t vlq() {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            const std::uint8_t b = u8("variable-length quantity");
            v = (v << 7) | (b & 0x7F);
            if (!(b & 0x80)) return v;
        }
        throw MidiError("variable-length quantity longer than 4 bytes", pos_);
    }
    bool tag(const char (&id)[5]) {
        need(4, "chunk id");
        return std::equal(id, id + 4, bytes_.begin() + static_cast<std::ptrdiff_t>(pos_));
    }
    void skip(std::size_t n, const char* what) {
        need(n, what);
        pos_ += n;
    }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

struct TickNote {
    int pitch;
    std::uint64_t start;
    std::uint64_t end;
};

void parse_track(ByteReader& r, std::size_t end, std::vector<TickNote>& out) {
    std::array<std::deque<std::uint64_t>, 16 * 128> open;
    std::uint64_t tick = 0;
    std::uint8_t running = 0;
    while (r.pos() < end) {
        tick += r.vlq();
        std::uint8_t status = r.peek();
        if (status & 0x80) {
            r.u8();
        } else {
            if (!running) throw MidiError("data byte without running status", r.pos());
            status = running;
        }
        if (status == 0xFF) {
            const std::uint8_t type = r.u8("meta event");
            const std::uint32_t len = r.vlq();
            r.skip(len, "meta event payload");
            if (type == 0x2F) break;
            continue;
        }
        if (status == 0xF0 || status == 0xF7) {
            r.skip(r.vlq(), "sysex payload");
            continue;
        }
        if (status >= 0xF0) throw MidiError("unexpected system message in track", r.pos() - 1);
        running = status;
        const std::uint8_t kind = status & 0xF0;
        const int channel = status & 0x0F;
        const std::uint8_t d1 = r.u8("channel message");
        if ((d1 & 0x80)) throw MidiError("data byte out of range", r.pos() - 1);
        if (kind == 0xC0 || kind == 0xD0) continue;
        const std::uint8_t d2 = r.u8("channel message");
        auto& q = open[static_cast<std::size_t>(channel * 128 + d1)];
        if (kind == 0x90 && d2 > 0) {
            q.push_back(tick);
        } else if (kind == 0x80 || kind == 0x90) {
            if (!q.empty()) {
                out.push_back({d1, q.front(), tick});
                q.pop_front();
            }
        }
    }
    if (r.pos() > end) throw MidiError("event runs past end of track chunk", end);
    // Notes never switched off end with the track.
    for (std::size_t k = 0; k < open.size(); ++k)
        for (auto start : open[k]) out.push_back({static_cast<int>(k % 128), start, tick});
}

void write_vlq(std::vector<std::uint8_t>& out, std::uint32_t v) {
    std::uint8_t buf[4];
    int n = 0;
    do {
        buf[n++] = v & 0x7F;
        v >>= 7;
    } while (v);
    for (int i = n - 1; i >= 0; --i) out.push_back(static_cast<std::uint8_t>(buf[i] | (i ? 0x80 : 0)));
}

void write_be(std::vector<std::uint8_t>& out, std::uint32_t v, int n) {
    for (int i = n - 1; i >= 0; --i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

}  // namespace

MidiError::MidiError(const std::string& what, std::size_t offset)
    : std::runtime_error("midi: " + what + " at byte " + std::to_string(offset)), offset_(offset) {}

std::optional<std::string> validate_tokens(std::span<const int> tokens) {
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const int t = tokens[i];
        if (t < 0 || t >= kVocabSize) return "token " + std::to_string(t) + " at position " + std::to_string(i) + " outside vocabulary";
        if (t == kHold && i == 0) return std::string("hold token at position 0");
        if (t == kHold && tokens[i - 1] == kRest) return "hold after rest at position " + std::to_string(i);
    }
    return std::nullopt;
}

void require_valid(const TokenSequence& seq, int expected_length) {
    if (seq.length() != expected_length)
        throw std::domain_error("token sequence length " + std::to_string(seq.length()) + " != expected " +
                                std::to_string(expected_length));
    if (auto err = validate_tokens(seq.tokens)) throw std::domain_error("invalid token sequence: " + *err);
}

std::vector<Note> parse_midi(std::span<const std::uint8_t> bytes, int grid) {
    if (grid < 1) throw std::invalid_argument("parse_midi: grid must be positive");
    ByteReader r(bytes);
    if (!r.tag("MThd")) throw MidiError("missing MThd header", 0);
    r.skip(4, "header id");
    const std::uint32_t header_len = r.be(4, "header length");
    if (header_len < 6) throw MidiError("header chunk shorter than 6 bytes", 4);
    const std::size_t header_body = r.pos();
    const std::uint32_t format = r.be(2, "header");
    const std::uint32_t tracks = r.be(2, "header");
    const std::uint32_t division = r.be(2, "header");
    if (format > 1) throw MidiError("unsupported SMF format " + std::to_string(format), header_body);
    if (division & 0x8000) throw MidiError("SMPTE time division unsupported", header_body + 4);
    if (division == 0) throw MidiError("zero ticks per quarter note", header_body + 4);
    r.skip(header_len - 6, "header");

    std::vector<TickNote> ticks;
    std::uint32_t seen = 0;
    while (seen < tracks) {
        if (r.at_end()) throw MidiError("expected " + std::to_string(tracks) + " track chunks, found " + std::to_string(seen), r.pos());
        const bool is_track = r.tag("MTrk");
        r.skip(4, "chunk id");
        const std::uint32_t len = r.be(4, "chunk length");
        const std::size_t body = r.pos();
        r.need(len, "track chunk");
        if (is_track) {
            parse_track(r, body + len, ticks);
            ++seen;
        }
        r.seek(body + len);
    }

    std::vector<Note> notes;
    notes.reserve(ticks.size());
    const double scale = static_cast<double>(grid) / division;
    for (const auto& n : ticks) {
        const auto on = static_cast<int>(std::llround(static_cast<double>(n.start) * scale));
        const auto off = static_cast<int>(std::llround(static_cast<double>(n.end) * scale));
        notes.push_back({n.pitch, on, std::max(1, off - on)});
    }
    if (notes.empty()) throw EmptyClipError("midi: file contains no notes");
    std::sort(notes.begin(), notes.end(), [](const Note& a, const Note& b) {
        return a.onset != b.onset ? a.onset < b.onset : a.pitch < b.pitch;
    });
    return notes;
}

TokenSequence extract_monophonic(std::span<const Note> notes, int length, int grid, int start) {
    if (length < 1) throw std::invalid_argument("extract_monophonic: length must be positive");
    // Winning (highest, then latest-starting) note per step.
    std::vector<int> winner(static_cast<std::size_t>(length), -1);
    for (std::size_t k = 0; k < notes.size(); ++k) {
        const auto& n = notes[k];
        if (n.pitch < 0 || n.pitch > 127) throw std::domain_error("extract_monophonic: pitch out of range");
        const int lo = std::max(n.onset, start);
        const int hi = std::min(n.onset + n.duration, start + length);
        for (int s = lo; s < hi; ++s) {
            int& w = winner[static_cast<std::size_t>(s - start)];
            if (w < 0) {
                w = static_cast<int>(k);
                continue;
            }
            const auto& cur = notes[static_cast<std::size_t>(w)];
            if (n.pitch > cur.pitch || (n.pitch == cur.pitch && n.onset > cur.onset)) w = static_cast<int>(k);
        }
    }
    TokenSequence seq;
    seq.grid = grid;
    seq.tokens.resize(static_cast<std::size_t>(length));
    bool any = false;
    for (int i = 0; i < length; ++i) {
        const int w = winner[static_cast<std::size_t>(i)];
        if (w < 0) {
            seq.tokens[static_cast<std::size_t>(i)] = kRest;
            continue;
        }
        any = true;
        const bool continues = i > 0 && winner[static_cast<std::size_t>(i - 1)] == w;
        seq.tokens[static_cast<std::size_t>(i)] = continues ? kHold : notes[static_cast<std::size_t>(w)].pitch;
    }
    if (!any) throw EmptyClipError("extract_monophonic: window starting at step " + std::to_string(start) + " is silent");
    return seq;
}

std::vector<TokenSequence> slice_windows(std::span<const Note> notes, int length, int grid) {
    int total = 0;
    for (const auto& n : notes) total = std::max(total, n.onset + n.duration);
    std::vector<TokenSequence> out;
    for (int start = 0; start + length <= total; start += length) {
        try {
            out.push_back(extract_monophonic(notes, length, grid, start));
        } catch (const EmptyClipError&) {
        }
    }
    return out;
}

std::vector<std::uint8_t> tokens_to_midi(const TokenSequence& seq, double tempo_bpm) {
    if (auto err = validate_tokens(seq.tokens)) throw std::domain_error("tokens_to_midi: " + *err);
    if (!(tempo_bpm > 0.0)) throw std::domain_error("tokens_to_midi: tempo must be positive");
    if (seq.grid < 1 || kTicksPerQuarter % seq.grid != 0)
        throw std::domain_error("tokens_to_midi: grid must divide " + std::to_string(kTicksPerQuarter));
    const int ticks_per_step = kTicksPerQuarter / seq.grid;

    struct Event {
        std::uint32_t tick;
        int order;  // note-off before note-on at equal ticks
        std::uint8_t status;
        std::uint8_t pitch;
        std::uint8_t velocity;
    };
    std::vector<Event> events;
    int current = -1;
    int current_start = 0;
    auto close = [&](int step) {
        if (current < 0) return;
        events.push_back({static_cast<std::uint32_t>(current_start * ticks_per_step), 1, 0x90,
                          static_cast<std::uint8_t>(current), kVelocity});
        events.push_back({static_cast<std::uint32_t>(step * ticks_per_step), 0, 0x80, static_cast<std::uint8_t>(current), 0});
        current = -1;
    };
    for (int i = 0; i < seq.length(); ++i) {
        const int t = seq.tokens[static_cast<std::size_t>(i)];
        if (t == kHold) continue;
        close(i);
        if (t != kRest) {
            current = t;
            current_start = i;
        }
    }
    close(seq.length());
    std::stable_sort(events.begin(), events.end(),
                     [](const Event& a, const Event& b) { return a.tick != b.tick ? a.tick < b.tick : a.order < b.order; });

    std::vector<std::uint8_t> track;
    const auto usec = static_cast<std::uint32_t>(std::lround(60'000'000.0 / tempo_bpm));
    track.insert(track.end(), {0x00, 0xFF, 0x51, 0x03});
    write_be(track, usec, 3);
    track.insert(track.end(), {0x00, 0xFF, 0x58, 0x04, 0x04, 0x02, 0x18, 0x08});
    std::uint32_t last = 0;
    for (const auto& e : events) {
        write_vlq(track, e.tick - last);
        last = e.tick;
        track.insert(track.end(), {e.status, e.pitch, e.velocity});
    }
    const auto end_tick = static_cast<std::uint32_t>(seq.length() * ticks_per_step);
    write_vlq(track, end_tick > last ? end_tick - last : 0);
    track.insert(track.end(), {0xFF, 0x2F, 0x00});

    std::vector<std::uint8_t> out{'M', 'T', 'h', 'd'};
    write_be(out, 6, 4);
    write_be(out, 0, 2);
    write_be(out, 1, 2);
    write_be(out, kTicksPerQuarter, 2);
    out.insert(out.end(), {'M', 'T', 'r', 'k'});
    write_be(out, static_cast<std::uint32_t>(track.size()), 4);
    out.insert(out.end(), track.begin(), track.end());
    return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + p.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& p, std::span<const std::uint8_t> bytes) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace emodiff::music
