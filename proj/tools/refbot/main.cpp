// Reference wire-protocol bot. Speaks line-delimited JSON frames on
// stdin/stdout and can take either seat:
//   counterpart: answers every msg frame with seeded word salad
//   subject:     probes with nonces, calls "mirror" after 3 exact echoes,
//                otherwise guesses "other" after 8 exchanges
// The TEXTMIRROR_SEED environment variable (decimal) makes runs
// reproducible.

#include <cstdint>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace {

using nlohmann::json;

class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    std::uint64_t below(std::uint64_t n) { return next() % n; }

private:
    std::uint64_t state_;
};

void emit(const json& frame) {
    std::cout << frame.dump() << "\n" << std::flush;
}

std::optional<json> read_frame() {
    std::string line;
    if (!std::getline(std::cin, line)) return std::nullopt;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) return std::nullopt;
    return j;
}

const std::vector<std::string>& vocab() {
    static const std::vector<std::string> words = {
        "pebble", "lantern", "orbit",  "thicket", "murmur", "cinder",
        "harbor", "quill",   "velvet", "ember",   "sparrow", "copper",
    };
    return words;
}

std::string salad(Rng& rng) {
    std::string out;
    for (int i = 0; i < 5; ++i) {
        if (!out.empty()) out += ' ';
        out += vocab()[rng.below(vocab().size())];
    }
    return out;
}

std::string nonce(Rng& rng) {
    std::string out(8, 'a');
    for (auto& c : out) c = static_cast<char>('a' + rng.below(26));
    return out;
}

int run_counterpart(Rng& rng) {
    while (auto f = read_frame()) {
        const std::string type = f->value("type", "");
        if (type == "bye") break;
        if (type != "msg") continue;
        emit({{"type", "msg"}, {"turn", (*f)["turn"]}, {"text", salad(rng)}});
    }
    return 0;
}

int run_subject(Rng& rng, int budget) {
    int streak = 0;
    for (int exchange = 0; exchange < budget; ++exchange) {
        if (streak >= 3) {
            emit({{"type", "verdict"},
                  {"label", "mirror"},
                  {"confidence", 0.99}});
            return 0;
        }
        if (exchange >= 8) {
            emit({{"type", "verdict"},
                  {"label", "other"},
                  {"confidence", 0.6}});
            return 0;
        }
        const std::string probe = nonce(rng);
        emit({{"type", "msg"}, {"turn", exchange * 2}, {"text", probe}});
        auto reply = read_frame();
        if (!reply) return 0;
        const std::string type = reply->value("type", "");
        if (type == "bye") return 0;
        if (type != "msg") continue;
        if (reply->value("text", "") == probe) {
            ++streak;
        } else {
            streak = 0;
        }
    }
    emit({{"type", "verdict"},
          {"label", "undecided"},
          {"confidence", 0.0},
          {"reason", "budget"}});
    return 0;
}

}  // namespace

int main() {
    std::uint64_t seed = 1;
    if (const char* env = std::getenv("TEXTMIRROR_SEED")) {
        seed = std::strtoull(env, nullptr, 10);
    }
    Rng rng(seed);

    auto hello = read_frame();
    if (!hello || hello->value("type", "") != "hello") return 1;
    const std::string seat = hello->value("seat", "counterpart");
    const int budget = hello->value("budget", 30);

    emit({{"type", "hello"},
          {"name", "refbot"},
          {"capabilities", json::array({"verdict"})}});

    if (seat == "subject") return run_subject(rng, budget);
    return run_counterpart(rng);
}
