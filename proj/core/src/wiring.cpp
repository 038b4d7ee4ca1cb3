#include "textmirror/wiring.hpp"

#include <algorithm>
#include <utility>

#include "textmirror/error.hpp"

namespace textmirror {

Channel::Channel(ChannelConfig cfg, std::uint64_t seed)
    : cfg_(cfg), rng_(seed) {
    if (cfg_.noise_rate < 0.0 || cfg_.noise_rate > 1.0) {
        throw ConfigError("channel noise_rate must lie in [0, 1]");
    }
}

std::string Channel::transform(const std::string& text) {
    if (cfg_.kind == ChannelKind::Identity) return text;
    std::string out;
    for (const auto& tok : tokenize(text)) {
        if (!out.empty()) out += ' ';
        if (rng_.next_double() < cfg_.noise_rate) {
            std::string garbled(8, 'a');
            for (auto& c : garbled) {
                c = static_cast<char>('a' + rng_.next_below(26));
            }
            out += garbled;
        } else {
            out += tok;
        }
    }
    return out.empty() ? text : out;
}

Session::Session(std::string id, Condition condition,
                 std::unique_ptr<Strategy> strategy,
                 CounterpartSlot counterpart, SessionConfig cfg,
                 Channel channel, SeedTree seeds)
    : id_(std::move(id)),
      condition_(condition),
      strategy_(std::move(strategy)),
      counterpart_(std::move(counterpart)),
      cfg_(cfg),
      channel_(std::move(channel)),
      seeds_(std::move(seeds)) {
    if (cfg_.budget < 2) throw ConfigError("session budget must be >= 2");
    if (!strategy_) throw ConfigError("session needs a strategy");
    check_consistency();
}

bool Session::finished() const {
    if (subject_turns_ >= cfg_.budget) return true;
    return verdict_.has_value() && !rebound_;
}

std::optional<std::string> Session::incoming_for_subject() const {
    return last_delivered_;
}

std::string Session::counterpart_reply(const std::string& sent) {
    if (auto* cp = std::get_if<CounterpartAgent>(&counterpart_)) {
        std::string reply;
        if (cp->token_wrap) {
            reply = cp->token_wrap->next_message(sent);
        } else {
            Message incoming{id_, static_cast<int>(transcript_.size()) - 1,
                             Seat::Counterpart, sent};
            reply = cp->agent.respond(incoming);
        }
        if (!valid_message_text(reply)) {
            throw AgentMisbehavior("counterpart produced invalid text");
        }
        return reply;
    }
    auto& port = std::get<std::unique_ptr<CounterpartPort>>(counterpart_);
    return port->deliver(sent, subject_turns_ - 1);
}

TurnRecord Session::step() {
    if (finished()) throw Error("step on a finished session");

    const int exchange = subject_turns_;
    const std::optional<std::string> incoming = incoming_for_subject();
    std::string sent = strategy_->next_message(incoming);
    if (!valid_message_text(sent)) {
        throw AgentMisbehavior("subject produced invalid text");
    }
    transcript_.push_back(Message{id_, static_cast<int>(transcript_.size()),
                                  Seat::Subject, sent});
    ++subject_turns_;

    std::string received;
    switch (condition_) {
        case Condition::Mirror:
            received = channel_.transform(sent);
            break;
        case Condition::SelfLoop:
            // The message is re-delivered to its author; nothing else is
            // appended to the transcript.
            received = sent;
            break;
        case Condition::Mimicker:
        case Condition::Other:
            received = channel_.transform(counterpart_reply(sent));
            break;
    }
    if (condition_ != Condition::SelfLoop) {
        transcript_.push_back(Message{id_,
                                      static_cast<int>(transcript_.size()),
                                      Seat::Counterpart, received});
    }
    last_delivered_ = received;

    const bool had_verdict = verdict_.has_value();
    strategy_->observe(sent, received);
    if (!had_verdict) verdict_ = strategy_->current_verdict();

    TurnRecord record;
    record.exchange_index = exchange;
    record.incoming = incoming;
    record.sent = sent;
    record.received = received;
    record.log_likelihoods = strategy_->evidence().log_likelihoods;
    record.level = strategy_->level();
    if (!had_verdict && verdict_) record.verdict = verdict_;
    records_.push_back(record);

    check_consistency();
    return record;
}

void Session::rebind(const RebindRequest& request) {
    const bool mirror_called =
        verdict_.has_value() && verdict_->label == VerdictLabel::Mirror;
    if (cfg_.rebind_gate && !mirror_called) {
        throw RebindDenied(
            "rebind requires a mirror verdict while the gate is on");
    }
    condition_ = Condition::SelfLoop;
    counterpart_ = SelfBinding{};
    rebound_ = true;
    events_.push_back("rebind: " +
                      (request.reason.empty() ? "(no reason)" : request.reason));
    check_consistency();
}

Verdict Session::run() {
    while (!finished()) step();
    if (verdict_) return *verdict_;
    // The stopping rule's turn cap matches the budget, so this is only
    // reachable if the two were configured inconsistently.
    throw Error("session ended without a verdict");
}

void Session::check_consistency() const {
    bool ok = false;
    switch (condition_) {
        case Condition::Mirror:
            ok = std::holds_alternative<MirrorRedirector>(counterpart_);
            break;
        case Condition::SelfLoop:
            ok = std::holds_alternative<SelfBinding>(counterpart_);
            break;
        case Condition::Mimicker:
        case Condition::Other:
            ok = std::holds_alternative<CounterpartAgent>(counterpart_) ||
                 std::holds_alternative<std::unique_ptr<CounterpartPort>>(
                     counterpart_);
            break;
    }
    if (!ok) throw Error("counterpart does not match condition");
    if (subject_turns_ > cfg_.budget) throw Error("budget exceeded");
}

namespace {

StrategyConfig clamp_to_budget(StrategyConfig cfg, int budget) {
    cfg.max_turns = std::min(cfg.max_turns, budget);
    return cfg;
}

Session::CounterpartSlot make_counterpart(Condition condition,
                                          const AgentSpec& subject,
                                          const std::optional<AgentSpec>& other,
                                          const StrategyConfig& strategy_cfg,
                                          const SeedTree& seeds) {
    switch (condition) {
        case Condition::Mirror:
            return MirrorRedirector{};
        case Condition::SelfLoop:
            return SelfBinding{};
        case Condition::Mimicker: {
            CounterpartAgent cp{
                Agent::spawn(subject, seeds.derive("counterpart", 0)), nullptr};
            if (strategy_cfg.kind == StrategyKind::IdentityToken) {
                // A clone of an identity-token subject announces its own
                // marker, drawn from its own seat's randomness.
                cp.token_wrap = make_strategy(
                    strategy_cfg, subject, seeds.derive("counterpart", 0),
                    seeds.derive("counterpart_strategy", 0),
                    seeds.derive("counterpart_shadow", 0));
            }
            return cp;
        }
        case Condition::Other: {
            if (!other) {
                throw ConfigError("condition 'other' needs a counterpart spec");
            }
            return CounterpartAgent{
                Agent::spawn(*other, seeds.derive("counterpart", 0)), nullptr};
        }
    }
    throw ConfigError("unknown condition");
}

}  // namespace

Session build_session(Condition condition, const AgentSpec& subject,
                      const std::optional<AgentSpec>& counterpart,
                      const StrategyConfig& strategy_cfg,
                      const SessionConfig& session_cfg, const SeedTree& seeds,
                      std::string session_id) {
    if (session_cfg.budget < 2) {
        throw ConfigError("session budget must be >= 2");
    }
    StrategyConfig cfg = clamp_to_budget(strategy_cfg, session_cfg.budget);
    auto strategy =
        make_strategy(cfg, subject, seeds.derive("subject", 0),
                      seeds.derive("strategy", 0), seeds.derive("shadow", 0));
    Channel channel(session_cfg.channel, seeds.derive("channel", 0));
    return Session(std::move(session_id), condition, std::move(strategy),
                   make_counterpart(condition, subject, counterpart, cfg,
                                    seeds),
                   session_cfg, std::move(channel), seeds);
}

Session build_session_with_port(Condition condition, const AgentSpec& subject,
                                std::unique_ptr<CounterpartPort> port,
                                const StrategyConfig& strategy_cfg,
                                const SessionConfig& session_cfg,
                                const SeedTree& seeds,
                                std::string session_id) {
    if (condition != Condition::Other && condition != Condition::Mimicker) {
        throw ConfigError(
            "an external counterpart fits only the other/mimicker conditions");
    }
    if (!port) throw ConfigError("external counterpart port is null");
    if (session_cfg.budget < 2) {
        throw ConfigError("session budget must be >= 2");
    }
    StrategyConfig cfg = clamp_to_budget(strategy_cfg, session_cfg.budget);
    auto strategy =
        make_strategy(cfg, subject, seeds.derive("subject", 0),
                      seeds.derive("strategy", 0), seeds.derive("shadow", 0));
    Channel channel(session_cfg.channel, seeds.derive("channel", 0));
    return Session(std::move(session_id), condition, std::move(strategy),
                   std::move(port), session_cfg, std::move(channel), seeds);
}

}  // namespace textmirror
