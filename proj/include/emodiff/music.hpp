#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace emodiff::music {

// Token vocabulary: 0..127 note-on at that pitch, then hold and rest.
inline constexpr int kVocabSize = 130;
inline constexpr int kHold = 128;
inline constexpr int kRest = 129;
inline constexpr int kDefaultGrid = 4;     // steps per quarter note
inline constexpr int kDefaultLength = 32;  // two bars of 4/4 at 16ths

/// Stable identifier of the vocabulary layout, stored with datasets and checkpoints.
std::uint64_t vocabulary_hash();

struct Note {
    int pitch = 0;
    int onset = 0;     // grid steps
    int duration = 0;  // grid steps, >= 1

    bool operator==(const Note&) const = default;
};

struct TokenSequence {
    std::vector<int> tokens;
    int grid = kDefaultGrid;

    int length() const { return static_cast<int>(tokens.size()); }
    bool operator==(const TokenSequence&) const = default;
};

/// Raised for malformed Standard MIDI Files; carries the failing byte offset.
class MidiError : public std::runtime_error {
public:
    MidiError(const std::string& what, std::size_t offset);
    std::size_t offset() const { return offset_; }

private:
    std::size_t offset_;
};

class EmptyClipError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Empty optional when valid, otherwise a description of the first violation.
std::optional<std::string> validate_tokens(std::span<const int> tokens);
void require_valid(const TokenSequence& seq, int expected_length);

/// Notes of a format 0/1 SMF quantized to `grid` steps per quarter note,
/// sorted by onset then pitch. Overlapping notes are kept.
std::vector<Note> parse_midi(std::span<const std::uint8_t> bytes, int grid = kDefaultGrid);

/// Skyline reduction of notes within [start, start+length) to a token sequence.
TokenSequence extract_monophonic(std::span<const Note> notes, int length = kDefaultLength, int grid = kDefaultGrid,
                                 int start = 0);

/// Non-overlapping windows; all-silent windows and the trailing partial window are dropped.
std::vector<TokenSequence> slice_windows(std::span<const Note> notes, int length = kDefaultLength,
                                         int grid = kDefaultGrid);

/// Format-0 SMF at 480 ticks per quarter, fixed velocity.
std::vector<std::uint8_t> tokens_to_midi(const TokenSequence& seq, double tempo_bpm = 120.0);

std::vector<std::uint8_t> read_file(const std::filesystem::path& p);
void write_file(const std::filesystem::path& p, std::span<const std::uint8_t> bytes);

// --- emotion labels ---------------------------------------------------------

enum class Quadrant { HVHA = 0, LVHA = 1, LVLA = 2, HVLA = 3 };
enum class Task { FourQ, Arousal, Valence };

inline constexpr Quadrant kQuadrants[] = {Quadrant::HVHA, Quadrant::LVHA, Quadrant::LVLA, Quadrant::HVLA};

std::string_view quadrant_name(Quadrant q);
/// "Q1".."Q4" as used by EMOPIA.
std::string_view quadrant_code(Quadrant q);
std::optional<Quadrant> parse_quadrant_code(std::string_view code);
bool high_arousal(Quadrant q);
bool high_valence(Quadrant q);

std::string_view task_name(Task t);  // "4q", "arousal", "valence"
std::optional<Task> parse_task(std::string_view name);
int class_count(Task t);
/// Class names in class-id order, e.g. {"HA", "LA"}.
const std::vector<std::string>& class_names(Task t);
/// Class id for a name valid under `task`; empty when unknown.
std::optional<int> class_from_name(Task t, std::string_view name);

struct TaskLabel {
    Task task;
    int class_id;

    bool operator==(const TaskLabel&) const = default;
};

TaskLabel remap_label(Quadrant q, Task task);

struct LabeledClip {
    TokenSequence sequence;
    Quadrant label;
    std::string source_id;
};

struct ClipDescriptor {
    std::string clip_id;
    Quadrant label;
};

struct RowError {
    std::size_t line;
    std::string message;
};

struct LabelIndex {
    std::vector<ClipDescriptor> clips;
    std::vector<RowError> errors;
};

/// Parses a `clip_id,quadrant` CSV. An empty quadrant column falls back to the
/// EMOPIA stem prefix (Q1_..Q4_). Bad rows are collected, not thrown.
LabelIndex parse_label_csv(std::string_view text);
LabelIndex load_label_csv(const std::filesystem::path& p);
std::string format_label_csv(std::span<const ClipDescriptor> clips);

// --- synthetic corpus ---------------------------------------------------------

/// Balanced, deterministic labelled melodies: note density encodes arousal
/// (>= 12 onsets high, <= 6 low) and scale encodes valence (C major high,
/// C harmonic minor low).
std::vector<LabeledClip> synth_corpus(int n, std::uint64_t seed, int length = kDefaultLength);

struct ProxyAttributes {
    int note_ons = 0;
    bool major_evidence = false;  // contains E or A
    bool minor_evidence = false;  // contains Eb or Ab
};

ProxyAttributes proxy_attributes(const TokenSequence& seq);
/// Rule-based label of a synthetic melody; empty when the proxies are ambiguous.
std::optional<Quadrant> rule_label(const TokenSequence& seq);

/// Writes `<source_id>.mid` per clip plus `labels.csv`.
void write_corpus_dir(std::span<const LabeledClip> clips, const std::filesystem::path& dir, double tempo_bpm = 120.0);

}  // namespace emodiff::music
