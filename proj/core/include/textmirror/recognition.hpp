#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "textmirror/agents.hpp"
#include "textmirror/core.hpp"
#include "textmirror/seed.hpp"

// Subject-side classification machinery: probe generation, evidence
// accumulation over the three counterpart hypotheses, the stopping rule,
// and the graded recognition-level mapping.

namespace textmirror {

enum class StrategyKind {
    NonceProbe,            // probe-only echo detector
    ShadowEquality,        // exact-match against a shadow instance's reply
    SequentialLikelihood,  // distribution-level shadow likelihoods
    IdentityToken,         // instance-marker baseline (flagged as a cheat)
};

std::string_view to_string(StrategyKind k);
std::optional<StrategyKind> strategy_kind_from_string(std::string_view s);

/// Additively smoothed unigram model over every token the session has
/// carried so far (both directions), with one extra bucket for unseen
/// tokens. Used as the "someone else entirely" hypothesis and as the
/// mismatch floor inside the other two hypotheses.
class BackgroundModel {
public:
    explicit BackgroundModel(double beta = 0.1);

    /// Adds a message's tokens to the session vocabulary counts.
    void fold(const std::string& text);

    double token_probability(const std::string& token) const;

    /// Product of per-token probabilities, each floored at
    /// kLikelihoodFloor; a token-free message scores the bare floor.
    double message_probability(const std::string& text) const;

    double beta() const { return beta_; }
    double total_count() const { return total_; }
    std::size_t vocab_size() const { return counts_.size(); }

private:
    double beta_;
    double total_ = 0.0;
    std::map<std::string, double> counts_;
};

struct LogLikelihoods {
    double mirror = 0.0;
    double mimicker = 0.0;
    double other = 0.0;
};

struct Posterior {
    double mirror = 0.0;
    double mimicker = 0.0;
    double other = 0.0;
};

/// Normalizes the three hypotheses under a uniform prior (log-sum-exp).
Posterior normalize_posterior(const LogLikelihoods& ll);

struct EvidenceState {
    LogLikelihoods log_likelihoods;
    int turns_observed = 0;
    std::vector<std::string> probes_sent;
    RecognitionLevel level = RecognitionLevel::L0;

    // Echo and milestone bookkeeping feeding map_level().
    bool saw_exact_echo = false;
    int consecutive_echoes = 0;
    int max_consecutive_echoes = 0;
    bool mirror_verdict_emitted = false;
    bool identity_confirmed = false;

    // Set when a shadow-based strategy had to fall back to probe-only
    // behavior because the subject kind cannot be instantiated in-process.
    bool downgraded = false;
};

struct StrategyConfig {
    StrategyKind kind = StrategyKind::SequentialLikelihood;
    double decision_threshold = 0.99;  // posterior needed to call a label
    double epsilon = 1e-6;             // mixture floor, keeps logs finite
    int max_turns = 30;                // exchanges before giving up

    bool operator==(const StrategyConfig&) const = default;
};

/// Draws a fresh 8-character lowercase nonce, distinct from every nonce
/// this state has sent before, records it, and returns it as the message
/// text.
std::string make_probe(EvidenceState& state, SplitMix64& rng);

/// Scores one completed exchange against the three hypotheses.
///   mirror:   log[(1−ε)·1{received = sent} + ε·bg(received)]
///   mimicker: log[(1−ε)·p_shadow + ε·bg(received)], or log bg without one
///   other:    log[bg(received)]
/// `background` must reflect only messages from strictly earlier
/// exchanges. `shadow_probability` is the shadow instance's probability of
/// producing `received` at this point (std::nullopt when no shadow runs).
EvidenceState update_evidence(EvidenceState state, const Message& sent,
                              const Message& received,
                              std::optional<double> shadow_probability,
                              const BackgroundModel& background,
                              const StrategyConfig& cfg);

/// Convenience overload: computes the shadow probability from the shadow
/// agent at the role-swapped history (which must already include `sent`
/// from the counterpart's perspective).
EvidenceState update_evidence(EvidenceState state, const Message& sent,
                              const Message& received, const Agent& shadow,
                              const Transcript& shadow_history,
                              const BackgroundModel& background,
                              const StrategyConfig& cfg);

/// Stopping rule. Returns nothing until evidence exists; a label once its
/// posterior clears the threshold; Undecided("mirror-clone-equivalent")
/// when the mirror and mimicker posteriors agree to 1e-9 and jointly clear
/// the threshold; Undecided("budget") once max_turns exchanges pass.
std::optional<Verdict> decide(const EvidenceState& state,
                              const StrategyConfig& cfg);

/// Graded recognition level implied by the evidence so far:
/// L1 after the first exact echo, L2 after three consecutive exact echoes,
/// L3 once a mirror verdict has been emitted, L4 only on identity-token
/// confirmation. Monotone by construction.
RecognitionLevel map_level(const EvidenceState& state);

/// True iff the received text contains the subject's own instance token
/// verbatim. A mirror reflects the token; a clone embeds its own.
bool identity_token_check(const Message& sent, const Message& received,
                          const std::string& token);

/// Replays a counterpart-perspective transcript through a freshly spawned
/// shadow instance and returns the concrete reply it would emit next. The
/// transcript's last message must be the one awaiting a reply.
std::string shadow_reply(const AgentSpec& spec, std::uint64_t shadow_seed,
                         const Transcript& counterpart_view);

/// A subject-side strategy: produces each outgoing message, watches each
/// completed exchange, and may conclude with a verdict. Owns its evidence;
/// single-threaded; knows nothing about the true condition.
class Strategy {
public:
    virtual ~Strategy() = default;

    Strategy(const Strategy&) = delete;
    Strategy& operator=(const Strategy&) = delete;

    /// Text the subject sends next, given the latest delivered message.
    std::string next_message(const std::optional<std::string>& incoming);

    /// Scores the exchange that `next_message` opened.
    void observe(const std::string& sent, const std::string& received);

    std::optional<Verdict> current_verdict() const { return verdict_; }
    const EvidenceState& evidence() const { return evidence_; }
    const StrategyConfig& config() const { return cfg_; }
    RecognitionLevel level() const { return evidence_.level; }

    /// A strategy that has recognized a mirror is willing to take over the
    /// binding (the caller still arbitrates).
    bool wants_rebind() const;

    virtual std::string_view name() const = 0;

protected:
    Strategy(StrategyConfig cfg, AgentSpec subject_spec,
             std::uint64_t strategy_seed);

    /// Produces the outgoing text (natural reply or probe).
    virtual std::string compose(const std::optional<std::string>& incoming) = 0;

    /// Probability the shadow assigns to `received` for the current
    /// exchange; std::nullopt when the strategy runs no shadow.
    virtual std::optional<double> shadow_probability(
        const std::string& received) = 0;

    /// Extra per-exchange handling after evidence is updated.
    virtual void post_observe(const std::string& sent,
                              const std::string& received);

    int exchanges_started() const { return exchanges_started_; }
    const Transcript& own_view() const { return own_view_; }
    const AgentSpec& subject_spec() const { return subject_spec_; }

    std::string draw_probe() { return make_probe(evidence_, rng_); }
    void mark_downgraded() { evidence_.downgraded = true; }
    void confirm_identity();

private:
    StrategyConfig cfg_;
    AgentSpec subject_spec_;
    SplitMix64 rng_;
    EvidenceState evidence_;
    BackgroundModel background_;
    Transcript own_view_;  // subject's perspective of the conversation
    std::optional<Verdict> verdict_;
    int exchanges_started_ = 0;
};

/// Builds the configured strategy for an in-process subject. Shadow-based
/// kinds quietly fall back to probe-only behavior (recording the
/// downgrade) when the subject kind cannot run in-process.
std::unique_ptr<Strategy> make_strategy(const StrategyConfig& cfg,
                                        const AgentSpec& subject_spec,
                                        std::uint64_t subject_seed,
                                        std::uint64_t strategy_seed,
                                        std::uint64_t shadow_seed);

}  // namespace textmirror
