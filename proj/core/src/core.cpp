#include "textmirror/core.hpp"

#include <nlohmann/json.hpp>

#include <cctype>
#include <istream>
#include <sstream>
#include <stdexcept>

namespace textmirror {

using ordered_json = nlohmann::ordered_json;

std::string_view to_string(Seat s) {
    return s == Seat::Subject ? "subject" : "counterpart";
}

std::string_view to_string(Condition c) {
    switch (c) {
        case Condition::Other: return "other";
        case Condition::Mimicker: return "mimicker";
        case Condition::Mirror: return "mirror";
        case Condition::SelfLoop: return "self_loop";
    }
    return "other";
}

std::string_view to_string(VerdictLabel v) {
    switch (v) {
        case VerdictLabel::Other: return "other";
        case VerdictLabel::Mimicker: return "mimicker";
        case VerdictLabel::Mirror: return "mirror";
        case VerdictLabel::Undecided: return "undecided";
    }
    return "undecided";
}

std::string_view to_string(RecognitionLevel l) {
    switch (l) {
        case RecognitionLevel::L0: return "L0";
        case RecognitionLevel::L1: return "L1";
        case RecognitionLevel::L2: return "L2";
        case RecognitionLevel::L3: return "L3";
        case RecognitionLevel::L4: return "L4";
    }
    return "L0";
}

std::optional<Seat> seat_from_string(std::string_view s) {
    if (s == "subject") return Seat::Subject;
    if (s == "counterpart") return Seat::Counterpart;
    return std::nullopt;
}

std::optional<Condition> condition_from_string(std::string_view s) {
    if (s == "other") return Condition::Other;
    if (s == "mimicker") return Condition::Mimicker;
    if (s == "mirror") return Condition::Mirror;
    if (s == "self_loop") return Condition::SelfLoop;
    return std::nullopt;
}

std::optional<VerdictLabel> verdict_label_from_string(std::string_view s) {
    if (s == "other") return VerdictLabel::Other;
    if (s == "mimicker") return VerdictLabel::Mimicker;
    if (s == "mirror") return VerdictLabel::Mirror;
    if (s == "undecided") return VerdictLabel::Undecided;
    return std::nullopt;
}

std::optional<RecognitionLevel> level_from_string(std::string_view s) {
    if (s == "L0") return RecognitionLevel::L0;
    if (s == "L1") return RecognitionLevel::L1;
    if (s == "L2") return RecognitionLevel::L2;
    if (s == "L3") return RecognitionLevel::L3;
    if (s == "L4") return RecognitionLevel::L4;
    return std::nullopt;
}

bool valid_message_text(std::string_view text) {
    if (text.empty()) return false;
    return text.find('\n') == std::string_view::npos;
}

Transcript role_swap(const Transcript& t) {
    Transcript out = t;
    for (auto& m : out.messages) {
        m.seat = m.seat == Seat::Subject ? Seat::Counterpart : Seat::Subject;
    }
    return out;
}

bool is_alternating(const Transcript& t) {
    for (std::size_t i = 0; i < t.size(); ++i) {
        Seat expected = i % 2 == 0 ? Seat::Subject : Seat::Counterpart;
        if (t[i].seat != expected) return false;
    }
    return true;
}

bool mirror_pairs_identical(const Transcript& t) {
    for (std::size_t i = 1; i < t.size(); i += 2) {
        if (t[i].text != t[i - 1].text) return false;
    }
    return true;
}

bool well_formed(const Transcript& t) {
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (t[i].turn_index != static_cast<int>(i)) return false;
        if (!valid_message_text(t[i].text)) return false;
    }
    return true;
}

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    auto is_space = [](unsigned char c) {
        return c == ' ' || c == '\t' || c == '\v' || c == '\f' || c == '\r' ||
               c == '\n';
    };
    while (i < text.size()) {
        while (i < text.size() && is_space(text[i])) ++i;
        std::size_t start = i;
        while (i < text.size() && !is_space(text[i])) ++i;
        if (i > start) out.emplace_back(text.substr(start, i - start));
    }
    return out;
}

std::string transcript_to_jsonl(const Transcript& t) {
    std::string out;
    for (const auto& m : t.messages) {
        ordered_json j;
        j["session_id"] = m.session_id;
        j["turn"] = m.turn_index;
        j["seat"] = std::string(to_string(m.seat));
        j["text"] = m.text;
        out += j.dump();
        out += '\n';
    }
    return out;
}

Transcript transcript_from_jsonl(std::istream& in) {
    Transcript t;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        ordered_json j = ordered_json::parse(line);
        Message m;
        m.session_id = j.at("session_id").get<std::string>();
        m.turn_index = j.at("turn").get<int>();
        auto seat = seat_from_string(j.at("seat").get<std::string>());
        if (!seat) throw std::runtime_error("bad seat in transcript line");
        m.seat = *seat;
        m.text = j.at("text").get<std::string>();
        t.push_back(std::move(m));
    }
    return t;
}

Transcript transcript_from_jsonl_string(const std::string& s) {
    std::istringstream in(s);
    return transcript_from_jsonl(in);
}

}  // namespace textmirror
