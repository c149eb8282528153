#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "emodiff/hash.hpp"
#include "emodiff/music.hpp"

namespace emodiff::music {

namespace {

std::string_view trim(std::string_view s) {
    const auto ws = " \t\r\n";
    const auto b = s.find_first_not_of(ws);
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(ws);
    return s.substr(b, e - b + 1);
}

}  // namespace

std::uint64_t vocabulary_hash() {
    return fnv1a64("monophonic-v1;note-on=0..127;hold=128;rest=129;size=130");
}

std::string_view quadrant_name(Quadrant q) {
    switch (q) {
        case Quadrant::HVHA: return "HVHA";
        case Quadrant::LVHA: return "LVHA";
        case Quadrant::LVLA: return "LVLA";
        case Quadrant::HVLA: return "HVLA";
    }
    return "?";
}

std::string_view quadrant_code(Quadrant q) {
    switch (q) {
        case Quadrant::HVHA: return "Q1";
        case Quadrant::LVHA: return "Q2";
        case Quadrant::LVLA: return "Q3";
        case Quadrant::HVLA: return "Q4";
    }
    return "?";
}

std::optional<Quadrant> parse_quadrant_code(std::string_view code) {
    for (auto q : kQuadrants)
        if (code == quadrant_code(q)) return q;
    return std::nullopt;
}

bool high_arousal(Quadrant q) { return q == Quadrant::HVHA || q == Quadrant::LVHA; }
bool high_valence(Quadrant q) { return q == Quadrant::HVHA || q == Quadrant::HVLA; }

std::string_view task_name(Task t) {
    switch (t) {
        case Task::FourQ: return "4q";
        case Task::Arousal: return "arousal";
        case Task::Valence: return "valence";
    }
    return "?";
}

std::optional<Task> parse_task(std::string_view name) {
    for (auto t : {Task::FourQ, Task::Arousal, Task::Valence})
        if (name == task_name(t)) return t;
    return std::nullopt;
}

int class_count(Task t) { return t == Task::FourQ ? 4 : 2; }

const std::vector<std::string>& class_names(Task t) {
    static const std::vector<std::string> four{"HVHA", "LVHA", "LVLA", "HVLA"};
    static const std::vector<std::string> arousal{"HA", "LA"};
    static const std::vector<std::string> valence{"HV", "LV"};
    switch (t) {
        case Task::FourQ: return four;
        case Task::Arousal: return arousal;
        case Task::Valence: return valence;
    }
    return four;
}

std::optional<int> class_from_name(Task t, std::string_view name) {
    const auto& names = class_names(t);
    for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return static_cast<int>(i);
    return std::nullopt;
}

TaskLabel remap_label(Quadrant q, Task task) {
    switch (task) {
        case Task::FourQ: return {task, static_cast<int>(q)};
        case Task::Arousal: return {task, high_arousal(q) ? 0 : 1};
        case Task::Valence: return {task, high_valence(q) ? 0 : 1};
    }
    return {task, 0};
}

LabelIndex parse_label_csv(std::string_view text) {
    LabelIndex index;
    std::set<std::string, std::less<>> ids;
    std::size_t line_no = 0;
    bool header_seen = false;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto nl = text.find('\n', pos);
        std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
        ++line_no;
        if (line_no == 1 && line.starts_with("\xEF\xBB\xBF")) line.remove_prefix(3);
        line = trim(line);
        if (line.empty()) continue;
        const auto comma = line.find(',');
        const auto id = trim(line.substr(0, comma));
        const auto quad = comma == std::string_view::npos ? std::string_view{} : trim(line.substr(comma + 1));
        if (!header_seen) {
            header_seen = true;
            if (id == "clip_id") {
                if (quad != "quadrant") index.errors.push_back({line_no, "header must be 'clip_id,quadrant'"});
                continue;
            }
        }
        if (id.empty()) {
            index.errors.push_back({line_no, "empty clip_id"});
            continue;
        }
        std::optional<Quadrant> q;
        if (!quad.empty()) {
            q = parse_quadrant_code(quad);
            if (!q) {
                index.errors.push_back({line_no, "unknown quadrant token '" + std::string(quad) + "' for clip '" + std::string(id) + "'"});
                continue;
            }
        } else {
            const auto us = id.find('_');
            if (us != std::string_view::npos) q = parse_quadrant_code(id.substr(0, us));
            if (!q) {
                index.errors.push_back({line_no, "no quadrant column and no Q1_..Q4_ stem prefix in '" + std::string(id) + "'"});
                continue;
            }
        }
        if (!ids.insert(std::string(id)).second) {
            index.errors.push_back({line_no, "duplicate clip_id '" + std::string(id) + "'"});
            continue;
        }
        index.clips.push_back({std::string(id), *q});
    }
    return index;
}

LabelIndex load_label_csv(const std::filesystem::path& p) {
    std::ifstream in(p);
    if (!in) throw std::runtime_error("cannot open label CSV " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_label_csv(ss.str());
}

std::string format_label_csv(std::span<const ClipDescriptor> clips) {
    std::string out = "clip_id,quadrant\n";
    for (const auto& c : clips) {
        out += c.clip_id;
        out += ',';
        out += quadrant_code(c.label);
        out += '\n';
    }
    return out;
}

}  // namespace emodiff::music
