#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "textmirror/error.hpp"
#include "textmirror/protocol.hpp"

using namespace textmirror;

namespace {

/// In-memory peer: serves scripted lines and records everything written.
class ScriptedConnection : public Connection {
public:
    std::deque<std::string> incoming;
    std::vector<std::string> outgoing;
    bool timeout_when_empty = false;

    void write_line(const std::string& line, int) override {
        outgoing.push_back(line);
    }

    std::optional<std::string> read_line(int) override {
        if (incoming.empty()) {
            if (timeout_when_empty) {
                throw CounterpartFailure("timed out waiting for a frame");
            }
            return std::nullopt;  // clean end of stream
        }
        std::string line = incoming.front();
        incoming.pop_front();
        if (line.size() > kMaxFrameBytes) {
            throw ProtocolViolation("frame exceeds the 64 KiB line limit");
        }
        return line;
    }
};

HelloFrame harness_hello() {
    HelloFrame h;
    h.name = "test-harness";
    h.capabilities = {"harness"};
    return h;
}

Frame round_trip(const Frame& f) { return decode_frame(encode_frame(f)); }

}  // namespace

TEST_CASE("every frame kind survives an encode/decode round trip") {
    HelloFrame hello{"botname", {"verdict", "probe"}, "subject", 12};
    CHECK(round_trip(Frame{hello}) == Frame{hello});

    HelloFrame bare{"plain", {}, std::nullopt, std::nullopt};
    CHECK(round_trip(Frame{bare}) == Frame{bare});

    MsgFrame msg{6, "a plain reply"};
    CHECK(round_trip(Frame{msg}) == Frame{msg});

    VerdictFrame verdict{"mirror", 0.9921, std::nullopt};
    CHECK(round_trip(Frame{verdict}) == Frame{verdict});

    VerdictFrame undecided{"undecided", 0.5, "budget"};
    CHECK(round_trip(Frame{undecided}) == Frame{undecided});

    CHECK(round_trip(Frame{ByeFrame{}}) == Frame{ByeFrame{}});

    ErrorFrame err{"we lost the plot"};
    CHECK(round_trip(Frame{err}) == Frame{err});
}

TEST_CASE("awkward payloads are framed losslessly") {
    for (const std::string& text :
         {std::string("quotes \" and \\ backslashes"),
          std::string("tabs\tinside"), std::string("unicode éß"),
          std::string("{\"type\":\"msg\"} braces in text")}) {
        MsgFrame f{3, text};
        Frame back = round_trip(Frame{f});
        CHECK(std::get<MsgFrame>(back).text == text);
    }
}

TEST_CASE("encoded bytes are stable") {
    CHECK(encode_frame(Frame{MsgFrame{4, "hi there"}}) ==
          R"({"type":"msg","turn":4,"text":"hi there"})");
    CHECK(encode_frame(Frame{ByeFrame{}}) == R"({"type":"bye"})");
    CHECK(encode_frame(Frame{ErrorFrame{"oops"}}) ==
          R"({"type":"error","message":"oops"})");
}

TEST_CASE("decode rejects malformed lines") {
    CHECK_THROWS_AS(decode_frame("this is not json"), ProtocolViolation);
    CHECK_THROWS_AS(decode_frame("[1,2,3]"), ProtocolViolation);
    CHECK_THROWS_AS(decode_frame("{}"), ProtocolViolation);  // no type
    CHECK_THROWS_AS(decode_frame(R"({"type":"zap"})"), ProtocolViolation);
    CHECK_THROWS_AS(decode_frame(R"({"type":"msg","turn":0})"),
                    ProtocolViolation);  // no text
    CHECK_THROWS_AS(decode_frame(R"({"type":"msg","turn":"x","text":"y"})"),
                    ProtocolViolation);
    CHECK_THROWS_AS(decode_frame(R"({"type":"msg","turn":-1,"text":"y"})"),
                    ProtocolViolation);
    CHECK_THROWS_AS(decode_frame(R"({"type":"hello","name":"a"})"),
                    ProtocolViolation);  // no capabilities
    CHECK_THROWS_AS(
        decode_frame(R"({"type":"hello","name":"a","capabilities":"x"})"),
        ProtocolViolation);
    CHECK_THROWS_AS(
        decode_frame(R"({"type":"hello","name":"a","capabilities":[1]})"),
        ProtocolViolation);
    CHECK_THROWS_AS(
        decode_frame(
            R"({"type":"hello","name":"a","capabilities":[],"seat":7})"),
        ProtocolViolation);
    CHECK_THROWS_AS(
        decode_frame(
            R"({"type":"hello","name":"a","capabilities":[],"budget":"x"})"),
        ProtocolViolation);
    CHECK_THROWS_AS(decode_frame(R"({"type":"verdict","label":"mirror"})"),
                    ProtocolViolation);  // no confidence
    CHECK_THROWS_AS(
        decode_frame(R"({"type":"verdict","label":"mirror","confidence":1.5})"),
        ProtocolViolation);
    CHECK_THROWS_AS(
        decode_frame(
            R"({"type":"verdict","label":"mirror","confidence":-0.2})"),
        ProtocolViolation);
    CHECK_THROWS_AS(decode_frame(R"({"type":"error"})"), ProtocolViolation);
}

TEST_CASE("the line limit is enforced exactly") {
    // {"type":"msg","turn":0,"text":"..."} is 33 bytes of scaffolding.
    const std::size_t scaffolding = 33;
    std::string text(kMaxFrameBytes - scaffolding, 'a');
    std::string line =
        R"({"type":"msg","turn":0,"text":")" + text + "\"}";
    REQUIRE(line.size() == kMaxFrameBytes);
    CHECK(std::get<MsgFrame>(decode_frame(line)).text == text);

    line.insert(line.size() - 2, "a");
    REQUIRE(line.size() == kMaxFrameBytes + 1);
    CHECK_THROWS_AS(decode_frame(line), ProtocolViolation);
}

TEST_CASE("receive turns a closed stream into a counterpart failure") {
    ScriptedConnection conn;
    CHECK_THROWS_AS(conn.receive(100), CounterpartFailure);
}

TEST_CASE("handshake exchanges hellos and reports the peer") {
    ScriptedConnection conn;
    conn.incoming.push_back(encode_frame(
        Frame{HelloFrame{"refbot", {"verdict"}, std::nullopt, std::nullopt}}));
    AgentDescriptor desc = handshake(conn, harness_hello(), 100);
    CHECK(desc.name == "refbot");
    CHECK(desc.has_capability("verdict"));
    CHECK(!desc.has_capability("telepathy"));
    REQUIRE(conn.outgoing.size() == 1);
    CHECK(conn.outgoing[0] == encode_frame(Frame{harness_hello()}));
}

TEST_CASE("handshake failures all surface as HandshakeFailure") {
    SUBCASE("first frame is not hello") {
        ScriptedConnection conn;
        conn.incoming.push_back(encode_frame(Frame{MsgFrame{0, "hi"}}));
        CHECK_THROWS_AS(handshake(conn, harness_hello(), 100),
                        HandshakeFailure);
    }
    SUBCASE("empty peer name") {
        ScriptedConnection conn;
        conn.incoming.push_back(encode_frame(
            Frame{HelloFrame{"", {}, std::nullopt, std::nullopt}}));
        CHECK_THROWS_AS(handshake(conn, harness_hello(), 100),
                        HandshakeFailure);
    }
    SUBCASE("garbage line") {
        ScriptedConnection conn;
        conn.incoming.push_back("not a frame at all");
        CHECK_THROWS_AS(handshake(conn, harness_hello(), 100),
                        HandshakeFailure);
    }
    SUBCASE("stream closed before any reply") {
        ScriptedConnection conn;
        CHECK_THROWS_AS(handshake(conn, harness_hello(), 100),
                        HandshakeFailure);
    }
    SUBCASE("timeout") {
        ScriptedConnection conn;
        conn.timeout_when_empty = true;
        CHECK_THROWS_AS(handshake(conn, harness_hello(), 100),
                        HandshakeFailure);
    }
}

TEST_CASE("exchange_turn delivers and enforces the turn echo") {
    Message out{"s", 4, Seat::Subject, "ping"};

    SUBCASE("a well-formed echo comes back as text") {
        ScriptedConnection conn;
        conn.incoming.push_back(encode_frame(Frame{MsgFrame{4, "pong"}}));
        CHECK(exchange_turn(conn, out, 100) == "pong");
        REQUIRE(conn.outgoing.size() == 1);
        CHECK(conn.outgoing[0] == R"({"type":"msg","turn":4,"text":"ping"})");
    }
    SUBCASE("a mismatched turn number is a violation") {
        ScriptedConnection conn;
        conn.incoming.push_back(encode_frame(Frame{MsgFrame{5, "pong"}}));
        CHECK_THROWS_AS(exchange_turn(conn, out, 100), ProtocolViolation);
    }
    SUBCASE("a non-msg reply is a violation") {
        ScriptedConnection conn;
        conn.incoming.push_back(
            encode_frame(Frame{VerdictFrame{"mirror", 0.99, std::nullopt}}));
        CHECK_THROWS_AS(exchange_turn(conn, out, 100), ProtocolViolation);
    }
    SUBCASE("empty reply text is a violation") {
        ScriptedConnection conn;
        conn.incoming.push_back(encode_frame(Frame{MsgFrame{4, ""}}));
        CHECK_THROWS_AS(exchange_turn(conn, out, 100), ProtocolViolation);
    }
    SUBCASE("an error frame is a counterpart failure") {
        ScriptedConnection conn;
        conn.incoming.push_back(encode_frame(Frame{ErrorFrame{"done for"}}));
        CHECK_THROWS_AS(exchange_turn(conn, out, 100), CounterpartFailure);
    }
}

TEST_CASE("external subject session validates its inputs") {
    auto echo = [](const std::string& s, int) { return s; };
    CHECK_THROWS_AS(ExternalSubjectSession(nullptr, "s", echo, 10),
                    ConfigError);
    CHECK_THROWS_AS(ExternalSubjectSession(std::make_unique<ScriptedConnection>(),
                                           "s", nullptr, 10),
                    ConfigError);
    CHECK_THROWS_AS(ExternalSubjectSession(std::make_unique<ScriptedConnection>(),
                                           "s", echo, 1),
                    ConfigError);
}

#ifdef REFBOT_PATH

TEST_CASE("reference bot: counterpart seat over a real subprocess") {
    auto conn = SubprocessConnection::spawn({REFBOT_PATH},
                                            {{kSeedEnvVar, "42"}});
    REQUIRE(conn != nullptr);
    CHECK(conn->pid() > 0);

    auto port = ExternalCounterpart::connect(std::move(conn), 10, 2000);
    CHECK(port->descriptor().name == "refbot");
    CHECK(port->descriptor().has_capability("verdict"));

    std::string first = port->deliver("hello out there", 0);
    std::string second = port->deliver("and again", 1);
    CHECK(valid_message_text(first));
    CHECK(valid_message_text(second));

    // The same seed replays the same stream from a fresh process.
    auto replay = ExternalCounterpart::connect(
        SubprocessConnection::spawn({REFBOT_PATH}, {{kSeedEnvVar, "42"}}), 10,
        2000);
    CHECK(replay->deliver("hello out there", 0) == first);
    CHECK(replay->deliver("and again", 1) == second);

    // A different seed lands elsewhere in word-salad space.
    auto other = ExternalCounterpart::connect(
        SubprocessConnection::spawn({REFBOT_PATH}, {{kSeedEnvVar, "43"}}), 10,
        2000);
    CHECK(other->deliver("hello out there", 0) != first);
}

TEST_CASE("reference bot: subject seat calls mirror on an echoing peer") {
    auto conn = SubprocessConnection::spawn({REFBOT_PATH},
                                            {{kSeedEnvVar, "7"}});
    ExternalSubjectSession session(
        std::move(conn), "ext-mirror",
        [](const std::string& sent, int) { return sent; }, 10, 2000);
    Verdict v = session.run();
    CHECK(v.label == VerdictLabel::Mirror);
    CHECK(v.confidence == doctest::Approx(0.99));
    CHECK(v.turns_used == 3);
    CHECK(session.descriptor().name == "refbot");
    CHECK(session.level() == RecognitionLevel::L3);
    CHECK(is_alternating(session.transcript()));
}

TEST_CASE("reference bot: subject seat settles on other against a stranger") {
    auto conn = SubprocessConnection::spawn({REFBOT_PATH},
                                            {{kSeedEnvVar, "7"}});
    ExternalSubjectSession session(
        std::move(conn), "ext-other",
        [](const std::string&, int) { return std::string("meow meow"); }, 12,
        2000);
    Verdict v = session.run();
    CHECK(v.label == VerdictLabel::Other);
    CHECK(v.turns_used == 8);
    CHECK(session.level() == RecognitionLevel::L0);
}

TEST_CASE("spawning a missing program fails loudly") {
    auto conn = SubprocessConnection::spawn({"/nonexistent/bot"});
    CHECK_THROWS_AS(conn->receive(1000), CounterpartFailure);
}

#endif  // REFBOT_PATH

#ifdef CHAOSBOT_PATH

namespace {

std::unique_ptr<SubprocessConnection> spawn_chaos(const std::string& mode) {
    return SubprocessConnection::spawn({CHAOSBOT_PATH, mode});
}

}  // namespace

TEST_CASE("chaos bot: hello-time misbehavior fails the handshake") {
    for (const std::string mode : {"no-hello", "oversize-hello", "garbage"}) {
        CAPTURE(mode);
        auto conn = spawn_chaos(mode);
        CHECK_THROWS_AS(handshake(*conn, harness_hello(), 2000),
                        HandshakeFailure);
    }
}

TEST_CASE("chaos bot: in-session misbehavior is typed precisely") {
    SUBCASE("wrong turn number is a protocol violation") {
        auto conn = spawn_chaos("wrong-turn");
        handshake(*conn, harness_hello(), 2000);
        Message out{"s", 0, Seat::Subject, "ping"};
        CHECK_THROWS_AS(exchange_turn(*conn, out, 2000), ProtocolViolation);
    }
    SUBCASE("empty reply text is a protocol violation") {
        auto conn = spawn_chaos("empty-text");
        handshake(*conn, harness_hello(), 2000);
        Message out{"s", 0, Seat::Subject, "ping"};
        CHECK_THROWS_AS(exchange_turn(*conn, out, 2000), ProtocolViolation);
    }
    SUBCASE("a seated port folds violations into counterpart failure") {
        auto port = ExternalCounterpart::connect(spawn_chaos("wrong-turn"), 10,
                                                 2000);
        CHECK_THROWS_AS(port->deliver("ping", 0), CounterpartFailure);
    }
    SUBCASE("silence runs into the timeout") {
        auto conn = spawn_chaos("hang");
        handshake(*conn, harness_hello(), 2000);
        Message out{"s", 0, Seat::Subject, "ping"};
        CHECK_THROWS_AS(exchange_turn(*conn, out, 300), CounterpartFailure);
    }
    SUBCASE("a mid-session exit is a counterpart failure") {
        auto conn = spawn_chaos("crash");
        handshake(*conn, harness_hello(), 2000);
        Message first{"s", 0, Seat::Subject, "ping"};
        CHECK(exchange_turn(*conn, first, 2000) == "so far so good");
        Message second{"s", 2, Seat::Subject, "ping again"};
        CHECK_THROWS_AS(exchange_turn(*conn, second, 2000),
                        CounterpartFailure);
    }
}

#endif  // CHAOSBOT_PATH
