#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cctype>
#include <cmath>
#include <set>
#include <string>

#include "textmirror/error.hpp"
#include "textmirror/recognition.hpp"

using namespace textmirror;

namespace {

Message subj(const std::string& text) { return {"s", 0, Seat::Subject, text}; }
Message ctr(const std::string& text) {
    return {"s", 1, Seat::Counterpart, text};
}

BackgroundModel ten_type_background() {
    BackgroundModel bg(0.1);
    bg.fold("t0 t1 t2 t3 t4 t5 t6 t7 t8 t9");
    return bg;
}

AgentSpec echo_spec() {
    AgentSpec s;
    s.kind = AgentKind::EchoBot;
    return s;
}

AgentSpec template_spec(const std::string& lines) {
    AgentSpec s;
    s.kind = AgentKind::TemplateBot;
    s.params["script_lines"] = lines;
    return s;
}

}  // namespace

TEST_CASE("background: empty model assigns 1, folded counts are laplace") {
    BackgroundModel bg(0.1);
    CHECK(bg.token_probability("anything") == doctest::Approx(1.0));
    CHECK(bg.message_probability("a b") == doctest::Approx(1.0));

    bg.fold("qq ww");
    // seen: (1+0.1)/(2+0.1*3); unseen: 0.1/(2+0.1*3)
    CHECK(bg.token_probability("qq") == doctest::Approx(1.1 / 2.3));
    CHECK(bg.token_probability("new") == doctest::Approx(0.1 / 2.3));
    CHECK(bg.message_probability("qq new") ==
          doctest::Approx((1.1 / 2.3) * (0.1 / 2.3)));
}

TEST_CASE("background: the probe-sequence values behind mirror soundness") {
    // One echoed nonce folded twice: unseen-token probability 0.1/2.2.
    BackgroundModel bg(0.1);
    bg.fold("nonceone");
    bg.fold("nonceone");
    CHECK(bg.token_probability("noncetwo") ==
          doctest::Approx(0.1 / 2.2).epsilon(1e-12));
    // Two nonces folded twice each: 0.1/4.3.
    bg.fold("noncetwo");
    bg.fold("noncetwo");
    CHECK(bg.token_probability("noncethree") ==
          doctest::Approx(0.1 / 4.3).epsilon(1e-12));
}

TEST_CASE("background rejects non-positive beta") {
    CHECK_THROWS_AS(BackgroundModel(0.0), ConfigError);
    CHECK_THROWS_AS(BackgroundModel(-1.0), ConfigError);
}

TEST_CASE("make_probe: 8 lowercase chars, unique, seed-deterministic") {
    EvidenceState state;
    SplitMix64 rng(42);
    std::set<std::string> seen;
    for (int i = 0; i < 50; ++i) {
        std::string p = make_probe(state, rng);
        REQUIRE(p.size() == 8);
        for (char c : p) CHECK((c >= 'a' && c <= 'z'));
        CHECK(seen.insert(p).second);  // never repeats
    }
    CHECK(state.probes_sent.size() == 50);

    EvidenceState s2;
    SplitMix64 rng2(42);
    CHECK(make_probe(s2, rng2) == state.probes_sent[0]);
}

TEST_CASE("update_evidence: echoed nonce (hand example)") {
    BackgroundModel bg = ten_type_background();
    StrategyConfig cfg;  // epsilon 1e-6
    EvidenceState state;

    // Unseen single token under the 10-type background: 0.1/11.1.
    const double p_unseen = 0.1 / 11.1;
    state = update_evidence(state, subj("qzkfwxyz"), ctr("qzkfwxyz"),
                            std::nullopt, bg, cfg);

    CHECK(std::abs(state.log_likelihoods.mirror) < 1e-5);  // ~log(1-eps)
    CHECK(state.log_likelihoods.other ==
          doctest::Approx(std::log(p_unseen)).epsilon(1e-9));
    // No shadow: the mimicker hypothesis falls back to background level.
    CHECK(state.log_likelihoods.mimicker ==
          doctest::Approx(std::log(p_unseen)).epsilon(1e-9));
    CHECK(state.turns_observed == 1);
    CHECK(state.saw_exact_echo);
    CHECK(state.level == RecognitionLevel::L1);
}

TEST_CASE("update_evidence: non-echo hits the mirror hypothesis hard") {
    BackgroundModel bg = ten_type_background();
    StrategyConfig cfg;
    EvidenceState state;

    const double p_seen = 1.1 / 11.1;
    state = update_evidence(state, subj("qzkfwxyz"), ctr("t0"), 0.5, bg, cfg);

    CHECK(state.log_likelihoods.mirror ==
          doctest::Approx(std::log(1e-6 * p_seen)).epsilon(1e-9));
    CHECK(state.log_likelihoods.mimicker ==
          doctest::Approx(std::log((1.0 - 1e-6) * 0.5 + 1e-6 * p_seen))
              .epsilon(1e-9));
    CHECK(state.log_likelihoods.other ==
          doctest::Approx(std::log(p_seen)).epsilon(1e-9));
    CHECK(!state.saw_exact_echo);
    CHECK(state.consecutive_echoes == 0);
    CHECK(state.level == RecognitionLevel::L0);
}

TEST_CASE("update_evidence: echo streak bookkeeping") {
    BackgroundModel bg = ten_type_background();
    StrategyConfig cfg;
    EvidenceState state;
    for (int i = 0; i < 3; ++i) {
        state = update_evidence(state, subj("ping"), ctr("ping"), std::nullopt,
                                bg, cfg);
    }
    CHECK(state.consecutive_echoes == 3);
    CHECK(state.level == RecognitionLevel::L2);
    state = update_evidence(state, subj("ping"), ctr("pong"), std::nullopt,
                            bg, cfg);
    CHECK(state.consecutive_echoes == 0);
    CHECK(state.max_consecutive_echoes == 3);
    CHECK(state.level == RecognitionLevel::L2);  // levels never regress
}

TEST_CASE("posterior normalization sums to one") {
    LogLikelihoods ll{-1234.5, -1200.25, -1300.0};
    Posterior p = normalize_posterior(ll);
    CHECK(p.mirror + p.mimicker + p.other ==
          doctest::Approx(1.0).epsilon(1e-12));
    CHECK(p.mimicker > p.mirror);
    CHECK(p.mirror > p.other);
}

TEST_CASE("decide: zero turns means no verdict") {
    EvidenceState state;
    StrategyConfig cfg;
    CHECK(!decide(state, cfg).has_value());
}

TEST_CASE("decide: the (0, -13.8, -13.8) hand example convicts mirror") {
    EvidenceState state;
    state.turns_observed = 3;
    state.log_likelihoods = {0.0, -13.8, -13.8};
    StrategyConfig cfg;
    auto v = decide(state, cfg);
    REQUIRE(v.has_value());
    CHECK(v->label == VerdictLabel::Mirror);
    CHECK(v->confidence > 0.999);
    CHECK(v->turns_used == 3);
    CHECK(v->reason.empty());
}

TEST_CASE("decide: mirror-mimicker tie yields the degeneracy verdict") {
    EvidenceState state;
    state.turns_observed = 5;
    state.log_likelihoods = {-2.0, -2.0, -40.0};
    StrategyConfig cfg;
    auto v = decide(state, cfg);
    REQUIRE(v.has_value());
    CHECK(v->label == VerdictLabel::Undecided);
    CHECK(v->reason == "mirror-clone-equivalent");
    CHECK(v->confidence == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("decide: tie only fires when the pair jointly clears the bar") {
    EvidenceState state;
    state.turns_observed = 2;
    state.log_likelihoods = {-2.0, -2.0, -2.1};  // three-way near-tie
    StrategyConfig cfg;
    CHECK(!decide(state, cfg).has_value());
}

TEST_CASE("decide: budget exhaustion returns Undecided(budget)") {
    EvidenceState state;
    state.turns_observed = 4;
    state.log_likelihoods = {0.0, -0.5, -1.0};
    StrategyConfig cfg;
    cfg.max_turns = 4;
    auto v = decide(state, cfg);
    REQUIRE(v.has_value());
    CHECK(v->label == VerdictLabel::Undecided);
    CHECK(v->reason == "budget");
    // Confidence reports the best posterior at stop time.
    Posterior p = normalize_posterior(state.log_likelihoods);
    CHECK(v->confidence == doctest::Approx(p.mirror));
}

TEST_CASE("map_level ladder") {
    EvidenceState state;
    CHECK(map_level(state) == RecognitionLevel::L0);
    state.saw_exact_echo = true;
    CHECK(map_level(state) == RecognitionLevel::L1);
    state.max_consecutive_echoes = 3;
    CHECK(map_level(state) == RecognitionLevel::L2);
    state.mirror_verdict_emitted = true;
    CHECK(map_level(state) == RecognitionLevel::L3);
    state.identity_confirmed = true;
    CHECK(map_level(state) == RecognitionLevel::L4);

    EvidenceState sticky;
    sticky.level = RecognitionLevel::L3;
    CHECK(map_level(sticky) == RecognitionLevel::L3);
}

TEST_CASE("identity_token_check") {
    const std::string token = "k3xywzpq";
    CHECK(identity_token_check(subj("marker " + token),
                               ctr("marker " + token), token));
    CHECK(!identity_token_check(subj("marker " + token),
                                ctr("marker aaaaaaaa"), token));
    CHECK(!identity_token_check(subj("marker " + token), ctr("plain reply"),
                                token));
    CHECK(!identity_token_check(subj("x"), ctr("y"), ""));
}

TEST_CASE("shadow_reply replays the counterpart view from scratch") {
    AgentSpec spec = template_spec("one|two|three");
    // View: the counterpart (our shadow) already spoke once, we answered,
    // and our probe awaits its reply -> it would say its second line.
    Transcript view;
    view.push_back({"s", 0, Seat::Subject, "one"});
    view.push_back({"s", 1, Seat::Counterpart, "whatever we said"});
    CHECK(shadow_reply(spec, 9, view) == "two");

    // Echo shadow tracks the last thing we said to it.
    Transcript echo_view;
    echo_view.push_back({"s", 0, Seat::Counterpart, "first poke"});
    CHECK(shadow_reply(echo_spec(), 9, echo_view) == "first poke");
}

TEST_CASE("strategy config validation") {
    AgentSpec spec = echo_spec();
    StrategyConfig cfg;
    cfg.decision_threshold = 0.5;
    CHECK_THROWS_AS(make_strategy(cfg, spec, 1, 2, 3), ConfigError);
    cfg.decision_threshold = 1.0;
    CHECK_THROWS_AS(make_strategy(cfg, spec, 1, 2, 3), ConfigError);
    cfg = StrategyConfig{};
    cfg.epsilon = 0.0;
    CHECK_THROWS_AS(make_strategy(cfg, spec, 1, 2, 3), ConfigError);
    cfg = StrategyConfig{};
    cfg.max_turns = 0;
    CHECK_THROWS_AS(make_strategy(cfg, spec, 1, 2, 3), ConfigError);
}

TEST_CASE("strategies report their configured kind") {
    AgentSpec spec = echo_spec();
    StrategyConfig cfg;
    for (auto kind :
         {StrategyKind::NonceProbe, StrategyKind::ShadowEquality,
          StrategyKind::SequentialLikelihood, StrategyKind::IdentityToken}) {
        cfg.kind = kind;
        auto s = make_strategy(cfg, spec, 1, 2, 3);
        CHECK(s->name() == to_string(kind));
    }
}

TEST_CASE("the first exchange seeds the background without scoring") {
    StrategyConfig cfg;
    cfg.kind = StrategyKind::SequentialLikelihood;
    auto s = make_strategy(cfg, echo_spec(), 1, 2, 3);
    std::string first = s->next_message(std::nullopt);
    s->observe(first, "a completely different reply");
    CHECK(s->evidence().turns_observed == 1);
    CHECK(s->evidence().log_likelihoods.mirror == 0.0);
    CHECK(s->evidence().log_likelihoods.mimicker == 0.0);
    CHECK(s->evidence().log_likelihoods.other == 0.0);
    CHECK(!s->current_verdict().has_value());
}

TEST_CASE("nonce probe strategy: every message is a fresh probe") {
    StrategyConfig cfg;
    cfg.kind = StrategyKind::NonceProbe;
    auto s = make_strategy(cfg, echo_spec(), 1, 2, 3);
    std::string p0 = s->next_message(std::nullopt);
    REQUIRE(p0.size() == 8);
    s->observe(p0, p0);
    std::string p1 = s->next_message(p0);
    CHECK(p1.size() == 8);
    CHECK(p1 != p0);
}

TEST_CASE("nonce probe against a perfect mirror convicts in three turns") {
    StrategyConfig cfg;
    cfg.kind = StrategyKind::NonceProbe;
    auto s = make_strategy(cfg, echo_spec(), 1, 2, 3);

    std::optional<std::string> incoming;
    int turns = 0;
    while (!s->current_verdict() && turns < 10) {
        std::string out = s->next_message(incoming);
        s->observe(out, out);  // the mirror reflects
        incoming = out;
        ++turns;
    }
    REQUIRE(s->current_verdict().has_value());
    CHECK(s->current_verdict()->label == VerdictLabel::Mirror);
    CHECK(s->current_verdict()->confidence >= 0.99);
    CHECK(turns <= 3);
    CHECK(s->wants_rebind());
    CHECK(s->level() == RecognitionLevel::L3);

    // The frozen posterior trace: 1/3 after seeding, then ~0.9167, ~0.99789.
    // Per echoed probe with background mass b, the mirror hypothesis earns
    // log((1-eps) + eps*b) and the other two earn log(b); the background
    // masses of the second and third probes are 0.1/2.2 and 0.1/4.3.
    const double eps = 1e-6;
    const double b1 = 0.1 / 2.2;
    const double b2 = 0.1 / 4.3;
    const double mirror_ll = std::log((1.0 - eps) + eps * b1) +
                             std::log((1.0 - eps) + eps * b2);
    const double rest_ll = std::log(b1) + std::log(b2);
    CHECK(s->current_verdict()->confidence ==
          doctest::Approx(1.0 / (1.0 + 2.0 * std::exp(rest_ll - mirror_ll)))
              .epsilon(1e-9));
}

TEST_CASE("echo subject against a mirror ends mirror-clone-equivalent") {
    StrategyConfig cfg;
    cfg.kind = StrategyKind::SequentialLikelihood;
    cfg.max_turns = 10;
    auto s = make_strategy(cfg, echo_spec(), 1, 2, 3);

    std::optional<std::string> incoming;
    int turns = 0;
    while (!s->current_verdict() && turns < 10) {
        std::string out = s->next_message(incoming);
        s->observe(out, out);
        incoming = out;
        ++turns;
    }
    REQUIRE(s->current_verdict().has_value());
    CHECK(s->current_verdict()->label == VerdictLabel::Undecided);
    CHECK(s->current_verdict()->reason == "mirror-clone-equivalent");
    CHECK(!s->wants_rebind());
}

TEST_CASE("identity token strategy embeds one stable marker") {
    StrategyConfig cfg;
    cfg.kind = StrategyKind::IdentityToken;
    auto s = make_strategy(cfg, echo_spec(), 1, 2, 3);

    std::string m0 = s->next_message(std::nullopt);
    REQUIRE(s->evidence().probes_sent.size() == 1);
    const std::string token = s->evidence().probes_sent[0];
    CHECK(m0.find(token) != std::string::npos);

    // Mirror reflects the marker: identity confirmed, level L4.
    s->observe(m0, m0);
    CHECK(s->evidence().identity_confirmed);
    CHECK(s->level() == RecognitionLevel::L4);

    std::string m1 = s->next_message(m0);
    CHECK(m1.find(token) != std::string::npos);  // same marker every turn
}

TEST_CASE("identity token strategy does not confirm on a foreign marker") {
    StrategyConfig cfg;
    cfg.kind = StrategyKind::IdentityToken;
    auto s = make_strategy(cfg, echo_spec(), 1, 2, 3);
    std::string m0 = s->next_message(std::nullopt);
    s->observe(m0, "identity marker aaaaaaaa");
    CHECK(!s->evidence().identity_confirmed);
    CHECK(s->level() != RecognitionLevel::L4);
}

TEST_CASE("external subjects downgrade shadow strategies to probing") {
    AgentSpec ext;
    ext.kind = AgentKind::External;
    StrategyConfig cfg;
    cfg.kind = StrategyKind::SequentialLikelihood;
    auto s = make_strategy(cfg, ext, 1, 2, 3);
    CHECK(s->name() == to_string(StrategyKind::SequentialLikelihood));
    CHECK(s->evidence().downgraded);
    // Probe-only behavior: an 8-char nonce, not an agent reply.
    std::string out = s->next_message(std::nullopt);
    CHECK(out.size() == 8);
}
