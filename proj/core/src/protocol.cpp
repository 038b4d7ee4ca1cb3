#include "textmirror/protocol.hpp"

#include <cerrno>
#include <chrono>
#include <cmath>
#include <csignal>
#include <cstring>

#include <fcntl.h>
#include <poll.h>
#include <sys/wait.h>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include "textmirror/error.hpp"

namespace textmirror {

namespace {

using ordered_json = nlohmann::ordered_json;
using steady_clock = std::chrono::steady_clock;

int ms_until(steady_clock::time_point deadline) {
    auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
                    deadline - steady_clock::now())
                    .count();
    if (left < 0) return 0;
    if (left > 1u << 30) return 1 << 30;
    return static_cast<int>(left);
}

const nlohmann::json& require_field(const nlohmann::json& j,
                                    const char* field) {
    auto it = j.find(field);
    if (it == j.end()) {
        throw ProtocolViolation(std::string("frame missing field '") + field +
                                "'");
    }
    return *it;
}

std::string require_string(const nlohmann::json& j, const char* field) {
    const auto& v = require_field(j, field);
    if (!v.is_string()) {
        throw ProtocolViolation(std::string("frame field '") + field +
                                "' must be a string");
    }
    return v.get<std::string>();
}

}  // namespace

std::string encode_frame(const Frame& frame) {
    ordered_json j;
    std::visit(
        [&](const auto& f) {
            using T = std::decay_t<decltype(f)>;
            if constexpr (std::is_same_v<T, HelloFrame>) {
                j["type"] = "hello";
                j["name"] = f.name;
                j["capabilities"] = f.capabilities;
                if (f.seat) j["seat"] = *f.seat;
                if (f.budget) j["budget"] = *f.budget;
            } else if constexpr (std::is_same_v<T, MsgFrame>) {
                j["type"] = "msg";
                j["turn"] = f.turn;
                j["text"] = f.text;
            } else if constexpr (std::is_same_v<T, VerdictFrame>) {
                j["type"] = "verdict";
                j["label"] = f.label;
                j["confidence"] = f.confidence;
                if (f.reason) j["reason"] = *f.reason;
            } else if constexpr (std::is_same_v<T, ByeFrame>) {
                j["type"] = "bye";
            } else {
                j["type"] = "error";
                j["message"] = f.message;
            }
        },
        frame);
    return j.dump();
}

Frame decode_frame(std::string_view line) {
    if (line.size() > kMaxFrameBytes) {
        throw ProtocolViolation("frame exceeds the 64 KiB line limit");
    }
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        throw ProtocolViolation("frame is not a JSON object");
    }
    const std::string type = require_string(j, "type");
    if (type == "hello") {
        HelloFrame f;
        f.name = require_string(j, "name");
        const auto& caps = require_field(j, "capabilities");
        if (!caps.is_array()) {
            throw ProtocolViolation("hello capabilities must be an array");
        }
        for (const auto& c : caps) {
            if (!c.is_string()) {
                throw ProtocolViolation("capabilities must be strings");
            }
            f.capabilities.push_back(c.get<std::string>());
        }
        if (auto it = j.find("seat"); it != j.end() && !it->is_null()) {
            if (!it->is_string()) {
                throw ProtocolViolation("hello seat must be a string");
            }
            f.seat = it->get<std::string>();
        }
        if (auto it = j.find("budget"); it != j.end() && !it->is_null()) {
            if (!it->is_number_integer()) {
                throw ProtocolViolation("hello budget must be an integer");
            }
            f.budget = it->get<int>();
        }
        return f;
    }
    if (type == "msg") {
        const auto& turn = require_field(j, "turn");
        if (!turn.is_number_integer() || turn.get<long long>() < 0) {
            throw ProtocolViolation("msg turn must be a non-negative integer");
        }
        MsgFrame f;
        f.turn = turn.get<int>();
        f.text = require_string(j, "text");
        return f;
    }
    if (type == "verdict") {
        VerdictFrame f;
        f.label = require_string(j, "label");
        const auto& conf = require_field(j, "confidence");
        if (!conf.is_number()) {
            throw ProtocolViolation("verdict confidence must be a number");
        }
        f.confidence = conf.get<double>();
        if (!std::isfinite(f.confidence) || f.confidence < 0.0 ||
            f.confidence > 1.0) {
            throw ProtocolViolation("verdict confidence must lie in [0, 1]");
        }
        if (auto it = j.find("reason"); it != j.end() && !it->is_null()) {
            if (!it->is_string()) {
                throw ProtocolViolation("verdict reason must be a string");
            }
            f.reason = it->get<std::string>();
        }
        return f;
    }
    if (type == "bye") return ByeFrame{};
    if (type == "error") {
        return ErrorFrame{require_string(j, "message")};
    }
    throw ProtocolViolation("unknown frame type: " + type);
}

void Connection::send(const Frame& frame, int timeout_ms) {
    write_line(encode_frame(frame), timeout_ms);
}

Frame Connection::receive(int timeout_ms) {
    std::optional<std::string> line = read_line(timeout_ms);
    if (!line) throw CounterpartFailure("peer closed the connection");
    return decode_frame(*line);
}

std::unique_ptr<SubprocessConnection> SubprocessConnection::spawn(
    const std::vector<std::string>& argv,
    const std::vector<std::pair<std::string, std::string>>& extra_env) {
    if (argv.empty()) throw CounterpartFailure("empty command line");
    std::signal(SIGPIPE, SIG_IGN);

    int to_child[2];
    int from_child[2];
    if (pipe(to_child) != 0) {
        throw CounterpartFailure(std::string("pipe: ") + std::strerror(errno));
    }
    if (pipe(from_child) != 0) {
        close(to_child[0]);
        close(to_child[1]);
        throw CounterpartFailure(std::string("pipe: ") + std::strerror(errno));
    }

    pid_t pid = fork();
    if (pid < 0) {
        for (int fd : {to_child[0], to_child[1], from_child[0], from_child[1]})
            close(fd);
        throw CounterpartFailure(std::string("fork: ") + std::strerror(errno));
    }
    if (pid == 0) {
        dup2(to_child[0], STDIN_FILENO);
        dup2(from_child[1], STDOUT_FILENO);
        for (int fd : {to_child[0], to_child[1], from_child[0], from_child[1]})
            close(fd);
        for (const auto& [key, value] : extra_env) {
            setenv(key.c_str(), value.c_str(), 1);
        }
        std::vector<char*> args;
        args.reserve(argv.size() + 1);
        for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
        args.push_back(nullptr);
        execvp(args[0], args.data());
        _exit(127);
    }

    close(to_child[0]);
    close(from_child[1]);
    fcntl(to_child[1], F_SETFL, O_NONBLOCK);
    fcntl(from_child[0], F_SETFL, O_NONBLOCK);
    return std::unique_ptr<SubprocessConnection>(
        new SubprocessConnection(pid, to_child[1], from_child[0]));
}

SubprocessConnection::SubprocessConnection(long pid, int write_fd, int read_fd)
    : pid_(pid), write_fd_(write_fd), read_fd_(read_fd) {}

SubprocessConnection::~SubprocessConnection() {
    try {
        shutdown();
    } catch (...) {
    }
}

void SubprocessConnection::shutdown() {
    if (write_fd_ >= 0) {
        close(write_fd_);
        write_fd_ = -1;
    }
    if (pid_ > 0) {
        int status = 0;
        bool exited = false;
        for (int i = 0; i < 25; ++i) {  // up to ~500 ms of grace
            pid_t rc = waitpid(static_cast<pid_t>(pid_), &status, WNOHANG);
            if (rc == static_cast<pid_t>(pid_) || rc < 0) {
                exited = true;
                break;
            }
            struct timespec ts {0, 20 * 1000 * 1000};
            nanosleep(&ts, nullptr);
        }
        if (!exited) {
            kill(static_cast<pid_t>(pid_), SIGKILL);
            waitpid(static_cast<pid_t>(pid_), &status, 0);
        }
        pid_ = -1;
    }
    if (read_fd_ >= 0) {
        close(read_fd_);
        read_fd_ = -1;
    }
}

void SubprocessConnection::write_line(const std::string& line,
                                      int timeout_ms) {
    if (write_fd_ < 0) throw CounterpartFailure("connection already closed");
    std::string data = line;
    data += '\n';
    std::size_t off = 0;
    const auto deadline =
        steady_clock::now() + std::chrono::milliseconds(timeout_ms);
    while (off < data.size()) {
        pollfd pfd{write_fd_, POLLOUT, 0};
        int rc = poll(&pfd, 1, ms_until(deadline));
        if (rc == 0) throw CounterpartFailure("peer not accepting data");
        if (rc < 0) {
            if (errno == EINTR) continue;
            throw CounterpartFailure(std::string("poll: ") +
                                     std::strerror(errno));
        }
        ssize_t n = write(write_fd_, data.data() + off, data.size() - off);
        if (n < 0) {
            if (errno == EINTR || errno == EAGAIN) continue;
            throw CounterpartFailure(std::string("write: ") +
                                     std::strerror(errno));
        }
        off += static_cast<std::size_t>(n);
    }
}

std::optional<std::string> SubprocessConnection::read_line(int timeout_ms) {
    if (read_fd_ < 0) throw CounterpartFailure("connection already closed");
    const auto deadline =
        steady_clock::now() + std::chrono::milliseconds(timeout_ms);
    while (true) {
        if (auto pos = buffer_.find('\n'); pos != std::string::npos) {
            std::string line = buffer_.substr(0, pos);
            buffer_.erase(0, pos + 1);
            if (line.size() > kMaxFrameBytes) {
                throw ProtocolViolation("frame exceeds the 64 KiB line limit");
            }
            return line;
        }
        if (buffer_.size() > kMaxFrameBytes) {
            throw ProtocolViolation("frame exceeds the 64 KiB line limit");
        }
        int wait = ms_until(deadline);
        if (wait <= 0) {
            throw CounterpartFailure("timed out waiting for a frame");
        }
        pollfd pfd{read_fd_, POLLIN, 0};
        int rc = poll(&pfd, 1, wait);
        if (rc == 0) throw CounterpartFailure("timed out waiting for a frame");
        if (rc < 0) {
            if (errno == EINTR) continue;
            throw CounterpartFailure(std::string("poll: ") +
                                     std::strerror(errno));
        }
        char chunk[4096];
        ssize_t n = read(read_fd_, chunk, sizeof chunk);
        if (n == 0) return std::nullopt;  // end of stream
        if (n < 0) {
            if (errno == EINTR || errno == EAGAIN) continue;
            throw CounterpartFailure(std::string("read: ") +
                                     std::strerror(errno));
        }
        buffer_.append(chunk, static_cast<std::size_t>(n));
    }
}

bool AgentDescriptor::has_capability(std::string_view cap) const {
    for (const auto& c : capabilities) {
        if (c == cap) return true;
    }
    return false;
}

AgentDescriptor handshake(Connection& conn, const HelloFrame& ours,
                          int timeout_ms) {
    try {
        conn.send(Frame{ours}, timeout_ms);
        Frame first = conn.receive(timeout_ms);
        auto* hello = std::get_if<HelloFrame>(&first);
        if (!hello) {
            throw HandshakeFailure("first frame from the peer was not hello");
        }
        if (hello->name.empty()) {
            throw HandshakeFailure("peer hello carries an empty name");
        }
        return AgentDescriptor{hello->name, hello->capabilities};
    } catch (const HandshakeFailure&) {
        throw;
    } catch (const Error& e) {
        throw HandshakeFailure(std::string("handshake failed: ") + e.what());
    }
}

std::string exchange_turn(Connection& conn, const Message& out,
                          int timeout_ms) {
    conn.send(Frame{MsgFrame{out.turn_index, out.text}}, timeout_ms);
    Frame reply = conn.receive(timeout_ms);
    if (auto* err = std::get_if<ErrorFrame>(&reply)) {
        throw CounterpartFailure("peer reported an error: " + err->message);
    }
    auto* msg = std::get_if<MsgFrame>(&reply);
    if (!msg) throw ProtocolViolation("expected a msg frame in reply");
    if (msg->turn != out.turn_index) {
        throw ProtocolViolation("reply turn " + std::to_string(msg->turn) +
                                " does not echo turn " +
                                std::to_string(out.turn_index));
    }
    if (!valid_message_text(msg->text)) {
        throw ProtocolViolation("reply text must be non-empty");
    }
    return msg->text;
}

std::unique_ptr<ExternalCounterpart> ExternalCounterpart::connect(
    std::unique_ptr<Connection> conn, int budget, int timeout_ms) {
    HelloFrame ours;
    ours.name = "textmirror-harness";
    ours.capabilities = {"harness"};
    ours.seat = "counterpart";
    ours.budget = budget;
    AgentDescriptor desc = handshake(*conn, ours, timeout_ms);
    return std::unique_ptr<ExternalCounterpart>(
        new ExternalCounterpart(std::move(conn), std::move(desc), timeout_ms));
}

ExternalCounterpart::ExternalCounterpart(std::unique_ptr<Connection> conn,
                                         AgentDescriptor descriptor,
                                         int timeout_ms)
    : conn_(std::move(conn)),
      descriptor_(std::move(descriptor)),
      timeout_ms_(timeout_ms) {}

std::string ExternalCounterpart::deliver(const std::string& text,
                                         int exchange_index) {
    // Frame turns use transcript numbering: the subject's k-th message
    // sits at index 2k.
    Message out{"", exchange_index * 2, Seat::Subject, text};
    try {
        return exchange_turn(*conn_, out, timeout_ms_);
    } catch (const CounterpartFailure&) {
        throw;
    } catch (const Error& e) {
        // Inside a session any breach just aborts the trial.
        throw CounterpartFailure(std::string("counterpart misbehaved: ") +
                                 e.what());
    }
}

ExternalSubjectSession::ExternalSubjectSession(
    std::unique_ptr<Connection> conn, std::string id, ReplyFn reply,
    int budget, int timeout_ms)
    : conn_(std::move(conn)),
      id_(std::move(id)),
      reply_(std::move(reply)),
      budget_(budget),
      timeout_ms_(timeout_ms) {
    if (!conn_) throw ConfigError("external subject needs a connection");
    if (!reply_) throw ConfigError("external subject needs a reply source");
    if (budget_ < 2) throw ConfigError("session budget must be >= 2");
}

RecognitionLevel ExternalSubjectSession::level() const {
    return echo_trail_.level;
}

Verdict ExternalSubjectSession::run() {
    HelloFrame ours;
    ours.name = "textmirror-harness";
    ours.capabilities = {"harness"};
    ours.seat = "subject";
    ours.budget = budget_;
    descriptor_ = handshake(*conn_, ours, timeout_ms_);
    if (!descriptor_.has_capability("verdict")) {
        throw UnsupportedCapability(
            "an external subject must declare the 'verdict' capability");
    }

    auto accept_verdict = [&](const VerdictFrame& v,
                              int exchanges) -> Verdict {
        auto label = verdict_label_from_string(v.label);
        if (!label) {
            throw ProtocolViolation("unknown verdict label: " + v.label);
        }
        Verdict verdict{*label, v.confidence, exchanges, v.reason.value_or("")};
        if (*label == VerdictLabel::Undecided && verdict.reason.empty()) {
            verdict.reason = "unspecified";
        }
        if (*label == VerdictLabel::Mirror) {
            echo_trail_.mirror_verdict_emitted = true;
            echo_trail_.level = map_level(echo_trail_);
        }
        return verdict;
    };
    auto send_bye = [&] {
        try {
            conn_->send(Frame{ByeFrame{}}, 200);
        } catch (...) {
        }
    };

    int exchanges = 0;
    while (true) {
        Frame f = conn_->receive(timeout_ms_);
        if (auto* v = std::get_if<VerdictFrame>(&f)) {
            verdict_ = accept_verdict(*v, exchanges);
            send_bye();
            return *verdict_;
        }
        if (auto* e = std::get_if<ErrorFrame>(&f)) {
            throw CounterpartFailure("subject reported an error: " +
                                     e->message);
        }
        auto* m = std::get_if<MsgFrame>(&f);
        if (!m) {
            throw ProtocolViolation("expected a msg or verdict frame");
        }
        if (m->turn != 2 * exchanges) {
            throw ProtocolViolation(
                "subject sent turn " + std::to_string(m->turn) +
                ", expected " + std::to_string(2 * exchanges));
        }
        if (!valid_message_text(m->text)) {
            throw ProtocolViolation("msg text must be non-empty");
        }

        transcript_.push_back(Message{
            id_, static_cast<int>(transcript_.size()), Seat::Subject, m->text});
        std::string reply = reply_(m->text, exchanges);
        transcript_.push_back(Message{
            id_, static_cast<int>(transcript_.size()), Seat::Counterpart,
            reply});
        conn_->send(Frame{MsgFrame{m->turn, reply}}, timeout_ms_);

        if (reply == m->text) {
            echo_trail_.saw_exact_echo = true;
            echo_trail_.consecutive_echoes += 1;
            echo_trail_.max_consecutive_echoes =
                std::max(echo_trail_.max_consecutive_echoes,
                         echo_trail_.consecutive_echoes);
        } else {
            echo_trail_.consecutive_echoes = 0;
        }
        echo_trail_.turns_observed += 1;
        echo_trail_.level = map_level(echo_trail_);

        ++exchanges;
        if (exchanges >= budget_) {
            // One last chance for a verdict before the budget closes the
            // session.
            try {
                Frame last = conn_->receive(timeout_ms_);
                if (auto* v = std::get_if<VerdictFrame>(&last)) {
                    verdict_ = accept_verdict(*v, exchanges);
                    send_bye();
                    return *verdict_;
                }
            } catch (const Error&) {
            }
            send_bye();
            verdict_ = Verdict{VerdictLabel::Undecided, 0.0, exchanges,
                               "budget"};
            return *verdict_;
        }
    }
}

}  // namespace textmirror
