#include <algorithm>
#include <cstdio>
#include <numeric>

#include "emodiff/music.hpp"
#include "emodiff/rng.hpp"

namespace emodiff::music {

namespace {

constexpr int kMajor[7] = {0, 2, 4, 5, 7, 9, 11};
constexpr int kHarmonicMinor[7] = {0, 2, 3, 5, 7, 8, 11};
constexpr int kTonic = 60;         // C4
constexpr int kMaxDegree = 14;     // C6
// Scale degrees 2 and 5 (the third and sixth) separate major from harmonic minor.
constexpr bool is_modal_degree(int deg) { return deg % 7 == 2 || deg % 7 == 5; }

int degree_pitch(int deg, bool major) {
    const int* scale = major ? kMajor : kHarmonicMinor;
    return kTonic + 12 * (deg / 7) + scale[deg % 7];
}

LabeledClip make_clip(Quadrant q, int index, std::uint64_t seed, int length) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(index)));
    const bool ha = high_arousal(q);
    const bool major = high_valence(q);

    // High arousal: eighth-note slots, 12-16 onsets. Low arousal: quarter-note slots, 4-6 onsets.
    const int slot = ha ? 2 : 4;
    const int n_slots = length / slot;
    const int k = ha ? rng.uniform_int(12, std::min(16, n_slots)) : rng.uniform_int(4, std::min(6, n_slots));
    std::vector<int> slots(static_cast<std::size_t>(n_slots));
    std::iota(slots.begin(), slots.end(), 0);
    rng.shuffle(slots.begin(), slots.end());
    slots.resize(static_cast<std::size_t>(k));
    std::sort(slots.begin(), slots.end());

    std::vector<int> degrees(static_cast<std::size_t>(k));
    int deg = rng.uniform_int(4, 10);
    for (int i = 0; i < k; ++i) {
        if (i > 0) {
            static constexpr int steps[] = {-2, -1, -1, 0, 1, 1, 2};
            deg += steps[rng.uniform_int(0, 6)];
            if (deg < 0) deg = -deg;
            if (deg > kMaxDegree) deg = 2 * kMaxDegree - deg;
        }
        degrees[static_cast<std::size_t>(i)] = deg;
    }
    if (std::none_of(degrees.begin(), degrees.end(), is_modal_degree)) {
        auto& d = degrees[static_cast<std::size_t>(rng.uniform_int(0, k - 1))];
        d = d - d % 7 + (rng.uniform() < 0.5 ? 2 : 5);
    }

    std::vector<Note> notes;
    for (int i = 0; i < k; ++i) {
        const int onset = slots[static_cast<std::size_t>(i)] * slot;
        const int next = i + 1 < k ? slots[static_cast<std::size_t>(i + 1)] * slot : length;
        const int gap = next - onset;
        // Mostly legato; occasionally leave a rest before the next onset.
        const int dur = rng.uniform() < 0.75 ? gap : rng.uniform_int(1, gap);
        notes.push_back({degree_pitch(degrees[static_cast<std::size_t>(i)], major), onset, dur});
    }

    char id[32];
    std::snprintf(id, sizeof id, "%s_synth_%05d", std::string(quadrant_code(q)).c_str(), index);
    return {extract_monophonic(notes, length), q, id};
}

}  // namespace

std::vector<LabeledClip> synth_corpus(int n, std::uint64_t seed, int length) {
    if (n < 1) throw std::invalid_argument("synth_corpus: n must be >= 1");
    if (length < 24) throw std::invalid_argument("synth_corpus: length must be >= 24 steps");
    std::vector<LabeledClip> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) out.push_back(make_clip(kQuadrants[i % 4], i, seed, length));
    return out;
}

ProxyAttributes proxy_attributes(const TokenSequence& seq) {
    ProxyAttributes a;
    for (int t : seq.tokens) {
        if (t >= 128) continue;
        ++a.note_ons;
        const int pc = t % 12;
        a.major_evidence |= pc == 4 || pc == 9;
        a.minor_evidence |= pc == 3 || pc == 8;
    }
    return a;
}

std::optional<Quadrant> rule_label(const TokenSequence& seq) {
    const auto a = proxy_attributes(seq);
    std::optional<bool> ha;
    if (a.note_ons >= 12) ha = true;
    else if (a.note_ons <= 6) ha = false;
    std::optional<bool> hv;
    if (a.major_evidence && !a.minor_evidence) hv = true;
    else if (a.minor_evidence && !a.major_evidence) hv = false;
    if (!ha || !hv) return std::nullopt;
    if (*ha) return *hv ? Quadrant::HVHA : Quadrant::LVHA;
    return *hv ? Quadrant::HVLA : Quadrant::LVLA;
}

void write_corpus_dir(std::span<const LabeledClip> clips, const std::filesystem::path& dir, double tempo_bpm) {
    std::filesystem::create_directories(dir);
    std::vector<ClipDescriptor> rows;
    for (const auto& c : clips) {
        write_file(dir / (c.source_id + ".mid"), tokens_to_midi(c.sequence, tempo_bpm));
        rows.push_back({c.source_id, c.label});
    }
    const auto csv = format_label_csv(rows);
    write_file(dir / "labels.csv", std::span(reinterpret_cast<const std::uint8_t*>(csv.data()), csv.size()));
}

}  // namespace emodiff::music
