#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "textmirror/core.hpp"
#include "textmirror/seed.hpp"

namespace textmirror {

enum class AgentKind { TemplateBot, MarkovBot, EchoBot, External };

std::string_view to_string(AgentKind k);
std::optional<AgentKind> agent_kind_from_string(std::string_view s);

/// Reproducible recipe for an agent. `seed` is part of the behavioral
/// identity (it selects the TemplateBot script, for instance); the runtime
/// RNG is seeded separately at instantiation, so a clone of the same spec
/// with a different instance seed is the same program in a different state.
struct AgentSpec {
    AgentKind kind = AgentKind::EchoBot;
    std::uint64_t seed = 0;
    std::map<std::string, std::string> params;

    bool operator==(const AgentSpec&) const = default;
};

/// Per-token probability floor. Messages a model could never emit score
/// floor^(token count), keeping log-odds finite without letting a single
/// impossible message outweigh honest per-token evidence.
inline constexpr double kLikelihoodFloor = 1e-6;

namespace detail {

/// Word-level n-gram model with additive smoothing. Targets range over the
/// training vocabulary plus one out-of-vocabulary bucket, emitted as the
/// literal token "<unk>". Generation and scoring use the same distribution:
/// a reply is exactly `reply_tokens` draws, each conditioned on the
/// previous `order` tokens (incoming message suffix first, start-padding
/// before that).
class MarkovModel {
public:
    MarkovModel(const std::string& corpus_text, int order, double alpha,
                int reply_tokens);

    int order() const { return order_; }
    int reply_tokens() const { return reply_tokens_; }
    double alpha() const { return alpha_; }
    std::size_t vocab_size() const { return vocab_.size(); }

    /// Token id for a surface form; OOV forms map to the unk id.
    int token_id(const std::string& token) const;
    const std::string& token_surface(int id) const;
    int unk_id() const { return static_cast<int>(vocab_.size()); }
    int start_id() const { return static_cast<int>(vocab_.size()) + 1; }

    /// Smoothed P(target | context). Context entries may include unk/start.
    double transition_probability(const std::vector<int>& context,
                                  int target) const;

    /// Full next-token distribution for a context, indexed by token id
    /// (vocab ids then unk). Sums to 1.
    std::vector<double> next_token_distribution(
        const std::vector<int>& context) const;

    /// Context derived from an incoming text (its last `order` tokens,
    /// start-padded). Empty incoming gives the all-start context.
    std::vector<int> context_for(const std::optional<std::string>& incoming)
        const;

    std::string generate_reply(const std::optional<std::string>& incoming,
                               SplitMix64& rng) const;

    /// Probability this model emits `candidate` in reply to `incoming`.
    /// Zero-probability candidates (wrong length, alien surface forms) are
    /// floored at kLikelihoodFloor per token.
    double reply_probability(const std::optional<std::string>& incoming,
                             const std::string& candidate) const;

private:
    int order_;
    double alpha_;
    int reply_tokens_;
    std::vector<std::string> vocab_;                 // by first appearance
    std::map<std::string, int> token_ids_;
    std::map<std::vector<int>, std::vector<double>> counts_;  // ctx -> per-target
    std::map<std::vector<int>, double> context_totals_;
};

struct TemplateState {
    std::vector<std::string> lines;
    std::size_t next_line = 0;
};
struct MarkovState {
    std::shared_ptr<const MarkovModel> model;
    std::optional<std::string> last_incoming;
};
struct EchoState {
    std::string opener;
    std::optional<std::string> last_incoming;
};

}  // namespace detail

/// A conversational agent with value semantics: copying an Agent copies its
/// state, so a copy replays identically. respond() is a pure function of
/// (state, incoming) with no hidden globals.
class Agent {
public:
    /// Instantiate from a spec. The instance seed drives the runtime RNG
    /// only. Throws UnsupportedCapability for External (out-of-process
    /// agents live behind the wire protocol) and ConfigError on bad params.
    static Agent spawn(const AgentSpec& spec, std::uint64_t instance_seed);

    /// True if the kind can be instantiated in-process as a private shadow
    /// copy and scored analytically.
    static bool supports_shadow(AgentKind kind);

    /// Next utterance. `incoming` is absent only on the opening turn.
    /// Always returns non-empty newline-free text.
    std::string respond(const std::optional<Message>& incoming);

    /// Probability that this agent's program, seeing `history` from its own
    /// seat, would emit `candidate` next. Distribution-level: marginalized
    /// over the RNG, independent of the instance seed. Floored per token at
    /// kLikelihoodFloor; never returns 0.
    double predictive_probability(const Transcript& history,
                                  const std::string& candidate) const;

    const AgentSpec& spec() const { return spec_; }
    AgentKind kind() const { return spec_.kind; }

private:
    Agent(AgentSpec spec, std::uint64_t instance_seed);

    AgentSpec spec_;
    SplitMix64 rng_;
    std::variant<detail::TemplateState, detail::MarkovState,
                 detail::EchoState>
        state_;
};

/// Spec-level alias: the subject instantiating a private copy of its own
/// program. Same capability rules as Agent::spawn.
inline Agent spawn_shadow(const AgentSpec& spec, std::uint64_t shadow_seed) {
    return Agent::spawn(spec, shadow_seed);
}

/// Loads a whitespace-tokenized UTF-8 corpus file. Throws ConfigError if
/// unreadable or empty.
std::string load_corpus_file(const std::string& path);

}  // namespace textmirror
