// Microbenchmarks for the paths that dominate experiment wall time.

#include <benchmark/benchmark.h>

#include <optional>
#include <string>

#include "textmirror/agents.hpp"
#include "textmirror/protocol.hpp"
#include "textmirror/recognition.hpp"
#include "textmirror/seed.hpp"
#include "textmirror/wiring.hpp"

namespace {

using namespace textmirror;

constexpr const char* kBenchCorpus =
    "the tide rolls in and the tide rolls out again each day while "
    "gulls wheel over the grey harbor and the boats knock gently "
    "against the pier as nets dry in the morning wind and the town "
    "wakes slowly to the smell of salt and tar and fresh bread";

AgentSpec markov_spec() {
    AgentSpec spec;
    spec.kind = AgentKind::MarkovBot;
    spec.params["corpus_text"] = kBenchCorpus;
    spec.params["order"] = "2";
    spec.params["reply_tokens"] = "8";
    return spec;
}

void BM_SeedDerivation(benchmark::State& state) {
    const SeedTree root(0x9e3779b97f4a7c15ULL);
    std::uint64_t index = 0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(root.derive("trial", index++));
    }
}
BENCHMARK(BM_SeedDerivation);

void BM_MarkovRespond(benchmark::State& state) {
    Agent agent = Agent::spawn(markov_spec(), 7);
    const Message incoming{"bench", 0, Seat::Counterpart,
                           "the boats knock gently against the pier"};
    for (auto _ : state) {
        benchmark::DoNotOptimize(agent.respond(incoming));
    }
}
BENCHMARK(BM_MarkovRespond);

void BM_EvidenceUpdate(benchmark::State& state) {
    StrategyConfig cfg;
    cfg.kind = StrategyKind::SequentialLikelihood;
    cfg.max_turns = 1 << 20;  // never hit the stopping rule
    auto strategy = make_strategy(cfg, markov_spec(), 7, 11, 13);
    const std::string sent = "the tide rolls in and the tide rolls";
    const std::string received = "gulls wheel over the grey harbor today";
    std::optional<std::string> incoming;
    for (auto _ : state) {
        benchmark::DoNotOptimize(strategy->next_message(incoming));
        strategy->observe(sent, received);
        incoming = received;
    }
}
BENCHMARK(BM_EvidenceUpdate);

void BM_MirrorTrial(benchmark::State& state) {
    AgentSpec subject;
    subject.kind = AgentKind::EchoBot;
    StrategyConfig scfg;
    scfg.kind = StrategyKind::NonceProbe;
    scfg.max_turns = 10;
    SessionConfig sess;
    sess.budget = 10;
    std::uint64_t trial = 0;
    for (auto _ : state) {
        Session session =
            build_session(Condition::Mirror, subject, std::nullopt, scfg,
                          sess, SeedTree(trial++), "bench");
        benchmark::DoNotOptimize(session.run());
    }
}
BENCHMARK(BM_MirrorTrial);

void BM_FrameRoundTrip(benchmark::State& state) {
    const Frame frame = MsgFrame{
        12, "the boats knock gently against the pier as nets dry"};
    for (auto _ : state) {
        const std::string line = encode_frame(frame);
        benchmark::DoNotOptimize(decode_frame(line));
    }
}
BENCHMARK(BM_FrameRoundTrip);

}  // namespace

BENCHMARK_MAIN();
