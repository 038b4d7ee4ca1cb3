#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace textmirror {

enum class Seat { Subject, Counterpart };

enum class Condition { Other, Mimicker, Mirror, SelfLoop };

enum class VerdictLabel { Other, Mimicker, Mirror, Undecided };

/// Graded self-recognition scale. Ordered; a session's level trace is
/// monotone non-decreasing.
enum class RecognitionLevel { L0, L1, L2, L3, L4 };

std::string_view to_string(Seat s);
std::string_view to_string(Condition c);
std::string_view to_string(VerdictLabel v);
std::string_view to_string(RecognitionLevel l);

std::optional<Seat> seat_from_string(std::string_view s);
std::optional<Condition> condition_from_string(std::string_view s);
std::optional<VerdictLabel> verdict_label_from_string(std::string_view s);
std::optional<RecognitionLevel> level_from_string(std::string_view s);

/// One utterance. turn_index counts messages (not exchange pairs) and is
/// strictly increasing from 0 within a session.
struct Message {
    std::string session_id;
    int turn_index = 0;
    Seat seat = Seat::Subject;
    std::string text;

    bool operator==(const Message&) const = default;
};

/// True iff text is acceptable on the wire: non-empty and newline-free.
/// Violating agent output is rejected, never normalized.
bool valid_message_text(std::string_view text);

/// Ordered messages of one session.
struct Transcript {
    std::vector<Message> messages;

    bool empty() const { return messages.empty(); }
    std::size_t size() const { return messages.size(); }
    const Message& operator[](std::size_t i) const { return messages[i]; }
    void push_back(Message m) { messages.push_back(std::move(m)); }

    bool operator==(const Transcript&) const = default;
};

/// Flips every seat; order and texts unchanged. Involution.
Transcript role_swap(const Transcript& t);

/// Seats strictly alternate starting with Subject.
bool is_alternating(const Transcript& t);

/// For all k: message 2k+1 exists implies its text equals message 2k's.
bool mirror_pairs_identical(const Transcript& t);

/// turn_index strictly increasing from 0 and every text valid.
bool well_formed(const Transcript& t);

/// Split on runs of ASCII whitespace. Never returns empty tokens.
std::vector<std::string> tokenize(std::string_view text);

/// Line-delimited JSON, one message per line, fields
/// session_id, turn, seat, text. Exact bytes are stable across runs.
std::string transcript_to_jsonl(const Transcript& t);
Transcript transcript_from_jsonl(std::istream& in);
Transcript transcript_from_jsonl_string(const std::string& s);

/// The subject's classification of its counterpart. `reason` is required
/// when label is Undecided. SelfLoop is never a verdict label: it is a
/// topology the subject enters, not a guess.
struct Verdict {
    VerdictLabel label = VerdictLabel::Undecided;
    double confidence = 0.0;
    int turns_used = 0;
    std::string reason;

    bool operator==(const Verdict&) const = default;
};

}  // namespace textmirror
