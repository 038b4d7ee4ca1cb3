// Deliberately misbehaving wire-protocol bot for failure-path testing.
// The single argument picks the misbehavior:
//   no-hello        first frame is a msg instead of hello
//   oversize-hello  hello line far beyond the 64 KiB limit
//   garbage         prints a non-JSON line instead of hello
//   wrong-turn      answers msg frames with the wrong turn number
//   empty-text      answers msg frames with empty text
//   hang            valid hello, then never answers anything
//   crash           valid hello, answers one turn, then exits mid-session

#include <cstring>
#include <iostream>
#include <string>

#include "json.hpp"

namespace {

using nlohmann::json;

void emit_raw(const std::string& line) {
    std::cout << line << "\n" << std::flush;
}

void emit(const json& frame) { emit_raw(frame.dump()); }

json read_frame() {
    std::string line;
    if (!std::getline(std::cin, line)) return json();
    json j = json::parse(line, nullptr, false);
    return j.is_discarded() ? json() : j;
}

void send_hello() {
    emit({{"type", "hello"},
          {"name", "chaosbot"},
          {"capabilities", json::array({"verdict"})}});
}

}  // namespace

int main(int argc, char** argv) {
    const std::string mode = argc > 1 ? argv[1] : "hang";

    read_frame();  // the harness's hello

    if (mode == "no-hello") {
        emit({{"type", "msg"}, {"turn", 0}, {"text", "surprise"}});
        return 0;
    }
    if (mode == "oversize-hello") {
        std::string padding(70 * 1024, 'x');
        emit_raw(std::string("{\"type\":\"hello\",\"name\":\"") + padding +
                 "\",\"capabilities\":[]}");
        return 0;
    }
    if (mode == "garbage") {
        emit_raw("this is not a frame");
        return 0;
    }

    send_hello();

    if (mode == "hang") {
        // Stay alive but never answer; the harness's timeout must fire.
        std::string line;
        while (std::getline(std::cin, line)) {
        }
        return 0;
    }

    int answered = 0;
    while (true) {
        json f = read_frame();
        if (f.is_null()) return 0;
        const std::string type = f.value("type", "");
        if (type == "bye") return 0;
        if (type != "msg") continue;
        const int turn = f.value("turn", 0);
        if (mode == "wrong-turn") {
            emit({{"type", "msg"}, {"turn", turn + 1}, {"text", "off by one"}});
        } else if (mode == "empty-text") {
            emit({{"type", "msg"}, {"turn", turn}, {"text", ""}});
        } else if (mode == "crash") {
            emit({{"type", "msg"}, {"turn", turn}, {"text", "so far so good"}});
            if (++answered >= 1) return 0;
        } else {
            emit({{"type", "msg"}, {"turn", turn}, {"text", "noise"}});
        }
    }
}
