#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "textmirror/core.hpp"
#include "textmirror/recognition.hpp"
#include "textmirror/wiring.hpp"

// Line-delimited JSON wire protocol that lets out-of-process programs take
// either seat: frame grammar, subprocess transport with timeouts, the
// handshake, and session drivers for external counterparts and subjects.

namespace textmirror {

inline constexpr std::size_t kMaxFrameBytes = 64 * 1024;
inline constexpr int kDefaultTimeoutMs = 5000;

/// Environment variable through which a spawned bot receives its
/// deterministic instance seed (decimal string).
inline constexpr const char* kSeedEnvVar = "TEXTMIRROR_SEED";

struct HelloFrame {
    std::string name;
    std::vector<std::string> capabilities;
    // Present only in the harness's hello: the seat the peer is being
    // given and the subject-turn budget for the session.
    std::optional<std::string> seat;
    std::optional<int> budget;

    bool operator==(const HelloFrame&) const = default;
};

struct MsgFrame {
    int turn = 0;
    std::string text;

    bool operator==(const MsgFrame&) const = default;
};

struct VerdictFrame {
    std::string label;
    double confidence = 0.0;
    std::optional<std::string> reason;

    bool operator==(const VerdictFrame&) const = default;
};

struct ByeFrame {
    bool operator==(const ByeFrame&) const = default;
};

struct ErrorFrame {
    std::string message;

    bool operator==(const ErrorFrame&) const = default;
};

using Frame =
    std::variant<HelloFrame, MsgFrame, VerdictFrame, ByeFrame, ErrorFrame>;

/// Serializes a frame as a single JSON line (no trailing newline).
std::string encode_frame(const Frame& frame);

/// Parses one line. Throws ProtocolViolation on malformed JSON, unknown
/// type, missing/ill-typed fields, or an oversize line.
Frame decode_frame(std::string_view line);

/// A byte-stream peer speaking one frame per line. Implementations must
/// make a blocked read abortable via the timeout.
class Connection {
public:
    virtual ~Connection() = default;

    /// Writes one line (newline appended). Throws CounterpartFailure if
    /// the peer cannot accept it within the timeout.
    virtual void write_line(const std::string& line, int timeout_ms) = 0;

    /// Reads one line without its newline. Returns std::nullopt on a clean
    /// end of stream; throws CounterpartFailure on timeout and
    /// ProtocolViolation if the line exceeds kMaxFrameBytes.
    virtual std::optional<std::string> read_line(int timeout_ms) = 0;

    void send(const Frame& frame, int timeout_ms);

    /// Reads and decodes one frame; end of stream becomes
    /// CounterpartFailure.
    Frame receive(int timeout_ms);
};

/// Runs a bot as a child process, frames over its standard streams.
class SubprocessConnection : public Connection {
public:
    /// Spawns argv[0] with the given extra environment variables. Throws
    /// CounterpartFailure if the program cannot be started.
    static std::unique_ptr<SubprocessConnection> spawn(
        const std::vector<std::string>& argv,
        const std::vector<std::pair<std::string, std::string>>& extra_env = {});

    ~SubprocessConnection() override;

    SubprocessConnection(const SubprocessConnection&) = delete;
    SubprocessConnection& operator=(const SubprocessConnection&) = delete;

    void write_line(const std::string& line, int timeout_ms) override;
    std::optional<std::string> read_line(int timeout_ms) override;

    /// Closes the child's stdin, waits briefly, then kills it.
    void shutdown();

    long pid() const { return pid_; }

private:
    SubprocessConnection(long pid, int write_fd, int read_fd);

    long pid_ = -1;
    int write_fd_ = -1;
    int read_fd_ = -1;
    std::string buffer_;
};

struct AgentDescriptor {
    std::string name;
    std::vector<std::string> capabilities;

    bool has_capability(std::string_view cap) const;
};

/// Exchanges hello frames (ours goes out first) and returns the peer's
/// declaration. Any failure — timeout, closed stream, a non-hello or
/// malformed first frame, an oversize line — becomes HandshakeFailure.
AgentDescriptor handshake(Connection& conn, const HelloFrame& ours,
                          int timeout_ms);

/// Delivers `out` as a msg frame and returns the reply text. The reply
/// must be a msg frame echoing the same turn number (anything else is
/// ProtocolViolation); no reply within the timeout is CounterpartFailure.
std::string exchange_turn(Connection& conn, const Message& out,
                          int timeout_ms);

/// Counterpart seat backed by a connection; plugs into a Session.
class ExternalCounterpart : public CounterpartPort {
public:
    /// Performs the handshake (harness hello announces seat
    /// "counterpart") and returns a ready port.
    static std::unique_ptr<ExternalCounterpart> connect(
        std::unique_ptr<Connection> conn, int budget,
        int timeout_ms = kDefaultTimeoutMs);

    std::string deliver(const std::string& text, int exchange_index) override;

    const AgentDescriptor& descriptor() const { return descriptor_; }

private:
    ExternalCounterpart(std::unique_ptr<Connection> conn,
                        AgentDescriptor descriptor, int timeout_ms);

    std::unique_ptr<Connection> conn_;
    AgentDescriptor descriptor_;
    int timeout_ms_;
};

/// Drives a session whose subject is an external program that judges for
/// itself. The subject speaks first; each of its msg frames is answered
/// with the counterpart's reply under the same turn number; a verdict
/// frame ends the session.
class ExternalSubjectSession {
public:
    /// Produces the counterpart's reply to the subject's text for the
    /// given exchange index.
    using ReplyFn = std::function<std::string(const std::string& sent,
                                              int exchange_index)>;

    ExternalSubjectSession(std::unique_ptr<Connection> conn, std::string id,
                           ReplyFn reply, int budget,
                           int timeout_ms = kDefaultTimeoutMs);

    /// Handshakes (requiring the "verdict" capability) and runs to a
    /// verdict or budget exhaustion. Protocol breaches throw.
    Verdict run();

    const Transcript& transcript() const { return transcript_; }
    const AgentDescriptor& descriptor() const { return descriptor_; }
    RecognitionLevel level() const;

private:
    std::unique_ptr<Connection> conn_;
    std::string id_;
    ReplyFn reply_;
    int budget_;
    int timeout_ms_;
    AgentDescriptor descriptor_;
    Transcript transcript_;
    EvidenceState echo_trail_;  // harness-side level bookkeeping only
    std::optional<Verdict> verdict_;
};

}  // namespace textmirror
