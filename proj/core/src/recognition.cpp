#include "textmirror/recognition.hpp"

#include <algorithm>
#include <cmath>

#include "textmirror/error.hpp"

namespace textmirror {

std::string_view to_string(StrategyKind k) {
    switch (k) {
        case StrategyKind::NonceProbe: return "nonce_probe";
        case StrategyKind::ShadowEquality: return "shadow_equality";
        case StrategyKind::SequentialLikelihood: return "sequential_likelihood";
        case StrategyKind::IdentityToken: return "identity_token";
    }
    return "nonce_probe";
}

std::optional<StrategyKind> strategy_kind_from_string(std::string_view s) {
    if (s == "nonce_probe") return StrategyKind::NonceProbe;
    if (s == "shadow_equality") return StrategyKind::ShadowEquality;
    if (s == "sequential_likelihood") return StrategyKind::SequentialLikelihood;
    if (s == "identity_token") return StrategyKind::IdentityToken;
    return std::nullopt;
}

BackgroundModel::BackgroundModel(double beta) : beta_(beta) {
    if (beta_ <= 0.0) throw ConfigError("background beta must be > 0");
}

void BackgroundModel::fold(const std::string& text) {
    for (const auto& tok : tokenize(text)) {
        counts_[tok] += 1.0;
        total_ += 1.0;
    }
}

double BackgroundModel::token_probability(const std::string& token) const {
    // One extra bucket stands in for every token not seen yet.
    const double buckets = static_cast<double>(counts_.size()) + 1.0;
    double count = 0.0;
    if (auto it = counts_.find(token); it != counts_.end()) count = it->second;
    return (count + beta_) / (total_ + beta_ * buckets);
}

double BackgroundModel::message_probability(const std::string& text) const {
    std::vector<std::string> toks = tokenize(text);
    if (toks.empty()) return kLikelihoodFloor;
    double p = 1.0;
    for (const auto& tok : toks) {
        p *= std::max(token_probability(tok), kLikelihoodFloor);
    }
    return p;
}

Posterior normalize_posterior(const LogLikelihoods& ll) {
    const double m = std::max({ll.mirror, ll.mimicker, ll.other});
    const double e_mir = std::exp(ll.mirror - m);
    const double e_mim = std::exp(ll.mimicker - m);
    const double e_oth = std::exp(ll.other - m);
    const double z = e_mir + e_mim + e_oth;
    return Posterior{e_mir / z, e_mim / z, e_oth / z};
}

std::string make_probe(EvidenceState& state, SplitMix64& rng) {
    while (true) {
        std::string nonce(8, 'a');
        for (auto& c : nonce) {
            c = static_cast<char>('a' + rng.next_below(26));
        }
        if (std::find(state.probes_sent.begin(), state.probes_sent.end(),
                      nonce) == state.probes_sent.end()) {
            state.probes_sent.push_back(nonce);
            return nonce;
        }
    }
}

namespace {

// The non-likelihood half of an evidence update: turn counting, echo
// streaks, and the level that follows from them.
void note_exchange(EvidenceState& state, bool echoed) {
    state.turns_observed += 1;
    if (echoed) {
        state.saw_exact_echo = true;
        state.consecutive_echoes += 1;
        state.max_consecutive_echoes =
            std::max(state.max_consecutive_echoes, state.consecutive_echoes);
    } else {
        state.consecutive_echoes = 0;
    }
    state.level = std::max(state.level, map_level(state));
}

}  // namespace

EvidenceState update_evidence(EvidenceState state, const Message& sent,
                              const Message& received,
                              std::optional<double> shadow_probability,
                              const BackgroundModel& background,
                              const StrategyConfig& cfg) {
    const double eps = cfg.epsilon;
    const double bg = background.message_probability(received.text);
    const bool echoed = received.text == sent.text;

    state.log_likelihoods.mirror +=
        std::log((1.0 - eps) * (echoed ? 1.0 : 0.0) + eps * bg);
    if (shadow_probability) {
        state.log_likelihoods.mimicker +=
            std::log((1.0 - eps) * *shadow_probability + eps * bg);
    } else {
        state.log_likelihoods.mimicker += std::log(bg);
    }
    state.log_likelihoods.other += std::log(bg);

    note_exchange(state, echoed);
    return state;
}

EvidenceState update_evidence(EvidenceState state, const Message& sent,
                              const Message& received, const Agent& shadow,
                              const Transcript& shadow_history,
                              const BackgroundModel& background,
                              const StrategyConfig& cfg) {
    const double p =
        shadow.predictive_probability(shadow_history, received.text);
    return update_evidence(std::move(state), sent, received, p, background,
                           cfg);
}

std::optional<Verdict> decide(const EvidenceState& state,
                              const StrategyConfig& cfg) {
    if (state.turns_observed == 0) return std::nullopt;

    const Posterior post = normalize_posterior(state.log_likelihoods);
    const double joint = post.mirror + post.mimicker;
    const double top = std::max({post.mirror, post.mimicker, post.other});

    if (std::abs(post.mirror - post.mimicker) < 1e-9 &&
        joint >= cfg.decision_threshold) {
        return Verdict{VerdictLabel::Undecided, joint, state.turns_observed,
                       "mirror-clone-equivalent"};
    }
    if (top >= cfg.decision_threshold) {
        VerdictLabel label = VerdictLabel::Other;
        if (post.mirror == top) {
            label = VerdictLabel::Mirror;
        } else if (post.mimicker == top) {
            label = VerdictLabel::Mimicker;
        }
        return Verdict{label, top, state.turns_observed, ""};
    }
    if (state.turns_observed >= cfg.max_turns) {
        return Verdict{VerdictLabel::Undecided, top, state.turns_observed,
                       "budget"};
    }
    return std::nullopt;
}

RecognitionLevel map_level(const EvidenceState& state) {
    RecognitionLevel level = RecognitionLevel::L0;
    if (state.saw_exact_echo) level = RecognitionLevel::L1;
    if (state.max_consecutive_echoes >= 3) level = RecognitionLevel::L2;
    if (state.mirror_verdict_emitted) level = RecognitionLevel::L3;
    if (state.identity_confirmed) level = RecognitionLevel::L4;
    // Never report below a level already reached.
    return std::max(level, state.level);
}

bool identity_token_check(const Message& /*sent*/, const Message& received,
                          const std::string& token) {
    if (token.empty()) return false;
    return received.text.find(token) != std::string::npos;
}

std::string shadow_reply(const AgentSpec& spec, std::uint64_t shadow_seed,
                         const Transcript& counterpart_view) {
    Agent shadow = spawn_shadow(spec, shadow_seed);
    std::optional<Message> pending;
    std::string reply;
    for (const auto& msg : counterpart_view.messages) {
        if (msg.seat == Seat::Subject) {
            reply = shadow.respond(pending);
        } else {
            pending = msg;
        }
    }
    return shadow.respond(pending);
}

Strategy::Strategy(StrategyConfig cfg, AgentSpec subject_spec,
                   std::uint64_t strategy_seed)
    : cfg_(cfg), subject_spec_(std::move(subject_spec)), rng_(strategy_seed) {
    if (cfg_.decision_threshold <= 0.5 || cfg_.decision_threshold >= 1.0) {
        throw ConfigError("decision_threshold must lie in (0.5, 1)");
    }
    if (cfg_.epsilon <= 0.0 || cfg_.epsilon >= 1.0) {
        throw ConfigError("epsilon must lie in (0, 1)");
    }
    if (cfg_.max_turns < 1) {
        throw ConfigError("max_turns must be >= 1");
    }
}

std::string Strategy::next_message(const std::optional<std::string>& incoming) {
    std::string text = compose(incoming);
    own_view_.push_back(Message{"", static_cast<int>(own_view_.size()),
                                Seat::Subject, text});
    ++exchanges_started_;
    return text;
}

void Strategy::observe(const std::string& sent, const std::string& received) {
    Message sent_msg{"", static_cast<int>(own_view_.size()) - 1, Seat::Subject,
                     sent};
    Message recv_msg{"", static_cast<int>(own_view_.size()), Seat::Counterpart,
                     received};

    if (evidence_.turns_observed == 0) {
        // The opening exchange only seeds the session vocabulary. With
        // nothing observed yet the background assigns probability 1 to any
        // text, which would hand the Other hypothesis a perfect first-turn
        // score it has not earned; scoring starts once there is a baseline.
        note_exchange(evidence_, received == sent);
    } else {
        std::optional<double> p_shadow = shadow_probability(received);
        evidence_ = update_evidence(std::move(evidence_), sent_msg, recv_msg,
                                    p_shadow, background_, cfg_);
    }

    // The exchange joins the session vocabulary only after being scored.
    background_.fold(sent);
    background_.fold(received);
    own_view_.push_back(recv_msg);

    post_observe(sent, received);

    if (!verdict_) {
        verdict_ = decide(evidence_, cfg_);
        if (verdict_ && verdict_->label == VerdictLabel::Mirror) {
            evidence_.mirror_verdict_emitted = true;
            evidence_.level = map_level(evidence_);
        }
    }
}

void Strategy::post_observe(const std::string&, const std::string&) {}

bool Strategy::wants_rebind() const {
    return verdict_ && verdict_->label == VerdictLabel::Mirror;
}

void Strategy::confirm_identity() {
    evidence_.identity_confirmed = true;
    evidence_.level = map_level(evidence_);
}

namespace {

// Probe-only echo detector; also serves as the fallback behavior when a
// shadow-based kind cannot run (the reported name stays the configured
// kind, with the downgrade recorded in the evidence).
class NonceProbeStrategy final : public Strategy {
public:
    NonceProbeStrategy(StrategyConfig cfg, AgentSpec spec,
                       std::uint64_t strategy_seed, StrategyKind reported,
                       bool downgraded)
        : Strategy(cfg, std::move(spec), strategy_seed), reported_(reported) {
        if (downgraded) mark_downgraded();
    }

    std::string_view name() const override { return to_string(reported_); }

protected:
    std::string compose(const std::optional<std::string>&) override {
        return draw_probe();
    }

    std::optional<double> shadow_probability(const std::string&) override {
        return std::nullopt;
    }

private:
    StrategyKind reported_;
};

// Shared scaffolding for the two shadow-running kinds: the subject's own
// agent supplies natural replies on even exchanges, probes fill the odd
// ones, and a private clone of the subject scores what the counterpart
// said from the counterpart's perspective.
class ShadowStrategyBase : public Strategy {
public:
    ShadowStrategyBase(StrategyConfig cfg, AgentSpec spec,
                       std::uint64_t subject_seed, std::uint64_t strategy_seed,
                       std::uint64_t shadow_seed)
        : Strategy(cfg, spec, strategy_seed),
          subject_(Agent::spawn(spec, subject_seed)),
          shadow_(spawn_shadow(spec, shadow_seed)),
          shadow_seed_(shadow_seed) {}

protected:
    std::string compose(const std::optional<std::string>& incoming) override {
        if (exchanges_started() % 2 == 1) return draw_probe();
        std::optional<Message> in;
        if (incoming) {
            in = Message{"", 0, Seat::Counterpart, *incoming};
        }
        return subject_.respond(in);
    }

    Agent subject_;
    Agent shadow_;
    std::uint64_t shadow_seed_;
};

class ShadowEqualityStrategy final : public ShadowStrategyBase {
public:
    using ShadowStrategyBase::ShadowStrategyBase;

    std::string_view name() const override {
        return to_string(StrategyKind::ShadowEquality);
    }

protected:
    std::optional<double> shadow_probability(
        const std::string& received) override {
        // Replay from scratch so consumed randomness matches a clone that
        // lived through the whole conversation.
        std::string predicted =
            shadow_reply(subject_spec(), shadow_seed_, role_swap(own_view()));
        return predicted == received ? 1.0 : 0.0;
    }
};

class SequentialLikelihoodStrategy final : public ShadowStrategyBase {
public:
    using ShadowStrategyBase::ShadowStrategyBase;

    std::string_view name() const override {
        return to_string(StrategyKind::SequentialLikelihood);
    }

protected:
    std::optional<double> shadow_probability(
        const std::string& received) override {
        return shadow_.predictive_probability(role_swap(own_view()), received);
    }
};

class IdentityTokenStrategy final : public Strategy {
public:
    IdentityTokenStrategy(StrategyConfig cfg, AgentSpec spec,
                          std::uint64_t strategy_seed)
        : Strategy(cfg, std::move(spec), strategy_seed) {
        token_ = draw_probe();
    }

    std::string_view name() const override {
        return to_string(StrategyKind::IdentityToken);
    }

    const std::string& token() const { return token_; }

protected:
    std::string compose(const std::optional<std::string>&) override {
        return "identity marker " + token_;
    }

    std::optional<double> shadow_probability(const std::string&) override {
        return std::nullopt;
    }

    void post_observe(const std::string& sent,
                      const std::string& received) override {
        Message s{"", 0, Seat::Subject, sent};
        Message r{"", 0, Seat::Counterpart, received};
        if (identity_token_check(s, r, token_)) confirm_identity();
    }

private:
    std::string token_;
};

}  // namespace

std::unique_ptr<Strategy> make_strategy(const StrategyConfig& cfg,
                                        const AgentSpec& subject_spec,
                                        std::uint64_t subject_seed,
                                        std::uint64_t strategy_seed,
                                        std::uint64_t shadow_seed) {
    switch (cfg.kind) {
        case StrategyKind::NonceProbe:
            return std::make_unique<NonceProbeStrategy>(
                cfg, subject_spec, strategy_seed, StrategyKind::NonceProbe,
                false);
        case StrategyKind::IdentityToken:
            return std::make_unique<IdentityTokenStrategy>(cfg, subject_spec,
                                                           strategy_seed);
        case StrategyKind::ShadowEquality:
        case StrategyKind::SequentialLikelihood: {
            if (!Agent::supports_shadow(subject_spec.kind)) {
                return std::make_unique<NonceProbeStrategy>(
                    cfg, subject_spec, strategy_seed, cfg.kind, true);
            }
            if (cfg.kind == StrategyKind::ShadowEquality) {
                return std::make_unique<ShadowEqualityStrategy>(
                    cfg, subject_spec, subject_seed, strategy_seed,
                    shadow_seed);
            }
            return std::make_unique<SequentialLikelihoodStrategy>(
                cfg, subject_spec, subject_seed, strategy_seed, shadow_seed);
        }
    }
    throw ConfigError("unknown strategy kind");
}

}  // namespace textmirror
