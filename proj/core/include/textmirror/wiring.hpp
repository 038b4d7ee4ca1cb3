#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "textmirror/agents.hpp"
#include "textmirror/core.hpp"
#include "textmirror/recognition.hpp"
#include "textmirror/seed.hpp"

// Session assembly and the turn loop: seats the subject against the
// counterpart dictated by the condition, relays messages (optionally
// through a lossy channel), and handles the post-verdict rebind that turns
// a session into a monologue.

namespace textmirror {

enum class ChannelKind { Identity, TokenNoise };

/// Optional transform applied to every delivery on its way back to the
/// subject. Identity by default; TokenNoise replaces each token with a
/// random nonce at the configured rate.
struct ChannelConfig {
    ChannelKind kind = ChannelKind::Identity;
    double noise_rate = 0.0;

    bool operator==(const ChannelConfig&) const = default;
};

class Channel {
public:
    Channel() : rng_(0) {}
    Channel(ChannelConfig cfg, std::uint64_t seed);

    std::string transform(const std::string& text);
    bool is_identity() const { return cfg_.kind == ChannelKind::Identity; }

private:
    ChannelConfig cfg_{};
    SplitMix64 rng_;
};

/// Delivery seat for counterparts that live outside this process; the
/// subprocess transport implements this.
class CounterpartPort {
public:
    virtual ~CounterpartPort() = default;

    /// Sends the subject's text and returns the counterpart's reply.
    /// Throws CounterpartFailure on timeout, disconnect, or protocol
    /// breach.
    virtual std::string deliver(const std::string& text,
                                int exchange_index) = 0;
};

struct RebindRequest {
    std::string reason;
};

struct SessionConfig {
    int budget = 30;
    bool rebind_gate = true;  // rebind only after a Mirror verdict
    ChannelConfig channel{};
};

/// One completed step: what went out, what came back, and the evidence
/// trail after scoring it.
struct TurnRecord {
    int exchange_index = 0;
    std::optional<std::string> incoming;  // what the subject was handed
    std::string sent;
    std::string received;  // equals `sent` on monologue steps
    LogLikelihoods log_likelihoods;
    RecognitionLevel level = RecognitionLevel::L0;
    std::optional<Verdict> verdict;  // present on the concluding step only
};

struct MirrorRedirector {};
struct SelfBinding {};

/// In-process counterpart; `token_wrap` makes a clone announce its own
/// instance marker when the subject plays the identity-token baseline.
struct CounterpartAgent {
    Agent agent;
    std::unique_ptr<Strategy> token_wrap;
};

class Session {
public:
    using CounterpartSlot =
        std::variant<CounterpartAgent, std::unique_ptr<CounterpartPort>,
                     MirrorRedirector, SelfBinding>;

    Session(std::string id, Condition condition,
            std::unique_ptr<Strategy> strategy, CounterpartSlot counterpart,
            SessionConfig cfg, Channel channel, SeedTree seeds);

    const std::string& id() const { return id_; }
    Condition condition() const { return condition_; }
    const Transcript& transcript() const { return transcript_; }
    const SeedTree& seeds() const { return seeds_; }
    int budget() const { return cfg_.budget; }
    int subject_turns() const { return subject_turns_; }
    bool rebound() const { return rebound_; }
    const std::optional<Verdict>& verdict() const { return verdict_; }
    const Strategy& strategy() const { return *strategy_; }
    const std::vector<TurnRecord>& turn_records() const { return records_; }
    const std::vector<std::string>& events() const { return events_; }

    /// No further steps allowed: verdict reached (and no rebind since) or
    /// budget spent.
    bool finished() const;

    /// Runs one full exchange and scores it.
    TurnRecord step();

    /// Switches the session into a self-loop monologue. Denied while the
    /// gate is on and no Mirror verdict has been reached.
    void rebind(const RebindRequest& request);

    /// Steps until a verdict is reached or the budget runs out; the
    /// strategy's stopping rule guarantees a verdict by the final turn.
    Verdict run();

private:
    std::optional<std::string> incoming_for_subject() const;
    std::string counterpart_reply(const std::string& sent);
    void check_consistency() const;

    std::string id_;
    Condition condition_;
    std::unique_ptr<Strategy> strategy_;
    CounterpartSlot counterpart_;
    SessionConfig cfg_;
    Channel channel_;
    SeedTree seeds_;
    Transcript transcript_;
    std::vector<TurnRecord> records_;
    std::vector<std::string> events_;
    std::optional<Verdict> verdict_;
    std::optional<std::string> last_delivered_;
    int subject_turns_ = 0;
    bool rebound_ = false;
};

/// Seats an in-process subject against the counterpart the condition
/// demands. `counterpart` is required iff condition is Other (Mimicker
/// clones the subject's spec with a different derived seed; Mirror and
/// SelfLoop need nobody). Budgets below 2 are rejected.
Session build_session(Condition condition, const AgentSpec& subject,
                      const std::optional<AgentSpec>& counterpart,
                      const StrategyConfig& strategy_cfg,
                      const SessionConfig& session_cfg, const SeedTree& seeds,
                      std::string session_id = "session");

/// Same, but seats an externally connected counterpart (condition must be
/// Other or Mimicker; the caller is responsible for having spawned the
/// right program).
Session build_session_with_port(Condition condition, const AgentSpec& subject,
                                std::unique_ptr<CounterpartPort> port,
                                const StrategyConfig& strategy_cfg,
                                const SessionConfig& session_cfg,
                                const SeedTree& seeds,
                                std::string session_id = "session");

}  // namespace textmirror
