#include "textmirror/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>
#include <utility>

#include <nlohmann/json.hpp>

#include "textmirror/error.hpp"
#include "textmirror/protocol.hpp"

namespace textmirror {

namespace {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

std::string value_to_string(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    return v.dump();
}

AgentSpec parse_agent_spec(const json& j, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be an object");
    AgentSpec spec;
    auto kind_it = j.find("kind");
    if (kind_it == j.end() || !kind_it->is_string()) {
        throw ConfigError(where + ".kind must be a string");
    }
    auto kind = agent_kind_from_string(kind_it->get<std::string>());
    if (!kind) {
        throw ConfigError(where + ".kind unknown: " +
                          kind_it->get<std::string>());
    }
    spec.kind = *kind;
    if (auto it = j.find("seed"); it != j.end()) {
        if (it->is_number_unsigned() || it->is_number_integer()) {
            spec.seed = it->get<std::uint64_t>();
        } else if (it->is_string()) {
            spec.seed = std::stoull(it->get<std::string>());
        } else {
            throw ConfigError(where + ".seed must be an integer");
        }
    }
    if (auto it = j.find("params"); it != j.end()) {
        if (!it->is_object()) {
            throw ConfigError(where + ".params must be an object");
        }
        for (auto& [key, value] : it->items()) {
            spec.params[key] = value_to_string(value);
        }
    }
    return spec;
}

StrategyConfig parse_strategy(const json& j, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be an object");
    StrategyConfig cfg;
    auto kind_it = j.find("kind");
    if (kind_it == j.end() || !kind_it->is_string()) {
        throw ConfigError(where + ".kind must be a string");
    }
    auto kind = strategy_kind_from_string(kind_it->get<std::string>());
    if (!kind) {
        throw ConfigError(where + ".kind unknown: " +
                          kind_it->get<std::string>());
    }
    cfg.kind = *kind;
    if (auto it = j.find("decision_threshold"); it != j.end()) {
        if (!it->is_number()) {
            throw ConfigError(where + ".decision_threshold must be a number");
        }
        cfg.decision_threshold = it->get<double>();
    }
    if (auto it = j.find("epsilon"); it != j.end()) {
        if (!it->is_number()) {
            throw ConfigError(where + ".epsilon must be a number");
        }
        cfg.epsilon = it->get<double>();
    }
    if (auto it = j.find("max_turns"); it != j.end()) {
        if (!it->is_number_integer()) {
            throw ConfigError(where + ".max_turns must be an integer");
        }
        cfg.max_turns = it->get<int>();
    }
    return cfg;
}

ChannelConfig parse_channel(const json& j) {
    if (!j.is_object()) throw ConfigError("channel must be an object");
    ChannelConfig cfg;
    if (auto it = j.find("kind"); it != j.end()) {
        if (!it->is_string()) throw ConfigError("channel.kind must be a string");
        const std::string kind = it->get<std::string>();
        if (kind == "identity") {
            cfg.kind = ChannelKind::Identity;
        } else if (kind == "token_noise") {
            cfg.kind = ChannelKind::TokenNoise;
        } else {
            throw ConfigError("channel.kind unknown: " + kind);
        }
    }
    if (auto it = j.find("noise_rate"); it != j.end()) {
        if (!it->is_number()) {
            throw ConfigError("channel.noise_rate must be a number");
        }
        cfg.noise_rate = it->get<double>();
    }
    return cfg;
}

bool is_external(const AgentSpec& spec) {
    return spec.kind == AgentKind::External;
}

std::vector<std::string> external_command(const AgentSpec& spec) {
    auto it = spec.params.find("cmd");
    if (it == spec.params.end()) {
        throw ConfigError("an external agent needs a 'cmd' param");
    }
    std::vector<std::string> argv = tokenize(it->second);
    if (argv.empty()) throw ConfigError("external agent 'cmd' is empty");
    return argv;
}

AgentSpec pick_other(const ExperimentConfig& cfg, const SeedTree& trial) {
    if (cfg.other_pool.empty()) {
        throw ConfigError("condition 'other' needs a non-empty other_pool");
    }
    SplitMix64 rng(trial.derive("pool", 0));
    return cfg.other_pool[rng.next_below(cfg.other_pool.size())];
}

std::string trial_name(Condition condition, int trial_index) {
    return std::string(to_string(condition)) + "-" +
           std::to_string(trial_index);
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::out | std::ios::binary | std::ios::trunc);
    if (!f.is_open()) {
        throw ConfigError("cannot write file: " + path.string());
    }
    f << bytes;
    if (!f.good()) throw ConfigError("write failed: " + path.string());
}

TrialResult run_in_process_trial(const ExperimentConfig& cfg,
                                 Condition condition, int trial_index,
                                 const SeedTree& trial,
                                 const std::string& sid) {
    TrialResult res;
    res.condition = condition;
    res.trial_index = trial_index;

    SessionConfig scfg;
    scfg.budget = cfg.budget;
    scfg.rebind_gate = cfg.rebind_gate;
    scfg.channel = cfg.channel;

    std::optional<AgentSpec> other;
    if (condition == Condition::Other) other = pick_other(cfg, trial);

    try {
        if (other && is_external(*other)) {
            auto conn = SubprocessConnection::spawn(
                external_command(*other),
                {{kSeedEnvVar,
                  std::to_string(trial.derive("counterpart", 0))}});
            auto port = ExternalCounterpart::connect(std::move(conn),
                                                     cfg.budget,
                                                     cfg.timeout_ms);
            Session session = build_session_with_port(
                condition, cfg.subject.spec, std::move(port),
                cfg.subject.strategy, scfg, trial, sid);
            res.verdict = session.run();
            res.turns = res.verdict.turns_used;
            res.level = session.strategy().level();
            res.transcript = session.transcript();
            res.records = session.turn_records();
        } else {
            Session session =
                build_session(condition, cfg.subject.spec, other,
                              cfg.subject.strategy, scfg, trial, sid);
            res.verdict = session.run();
            res.turns = res.verdict.turns_used;
            res.level = session.strategy().level();
            res.transcript = session.transcript();
            res.records = session.turn_records();
        }
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        res.aborted = true;
        res.abort_reason = e.what();
        res.verdict = Verdict{VerdictLabel::Undecided, 0.0, 0, "aborted"};
        res.turns = 0;
    }
    return res;
}

TrialResult run_external_subject_trial(const ExperimentConfig& cfg,
                                       Condition condition, int trial_index,
                                       const SeedTree& trial,
                                       const std::string& sid) {
    TrialResult res;
    res.condition = condition;
    res.trial_index = trial_index;

    if (condition == Condition::SelfLoop) {
        throw ConfigError("self_loop is not supported for external subjects");
    }

    try {
        // Counterpart reply source, with the channel applied on the way
        // back, exactly as for in-process subjects.
        Channel channel(cfg.channel, trial.derive("channel", 0));
        std::shared_ptr<Agent> other_agent;
        std::unique_ptr<ExternalCounterpart> clone_port;

        ExternalSubjectSession::ReplyFn inner;
        switch (condition) {
            case Condition::Mirror:
                inner = [](const std::string& text, int) { return text; };
                break;
            case Condition::Other: {
                AgentSpec other = pick_other(cfg, trial);
                if (is_external(other)) {
                    auto conn = SubprocessConnection::spawn(
                        external_command(other),
                        {{kSeedEnvVar,
                          std::to_string(trial.derive("counterpart", 0))}});
                    clone_port = ExternalCounterpart::connect(
                        std::move(conn), cfg.budget, cfg.timeout_ms);
                    auto* port = clone_port.get();
                    inner = [port](const std::string& text, int k) {
                        return port->deliver(text, k);
                    };
                } else {
                    other_agent = std::make_shared<Agent>(Agent::spawn(
                        other, trial.derive("counterpart", 0)));
                    inner = [other_agent](const std::string& text, int) {
                        Message in{"", 0, Seat::Counterpart, text};
                        std::string reply = other_agent->respond(in);
                        if (!valid_message_text(reply)) {
                            throw AgentMisbehavior(
                                "counterpart produced invalid text");
                        }
                        return reply;
                    };
                }
                break;
            }
            case Condition::Mimicker: {
                // The clone is another instance of the subject's own
                // program, re-seeded.
                auto conn = SubprocessConnection::spawn(
                    external_command(cfg.subject.spec),
                    {{kSeedEnvVar,
                      std::to_string(trial.derive("counterpart", 0))}});
                clone_port = ExternalCounterpart::connect(
                    std::move(conn), cfg.budget, cfg.timeout_ms);
                auto* port = clone_port.get();
                inner = [port](const std::string& text, int k) {
                    return port->deliver(text, k);
                };
                break;
            }
            case Condition::SelfLoop:
                break;  // rejected above
        }
        auto reply = [&channel, inner](const std::string& text, int k) {
            return channel.transform(inner(text, k));
        };

        auto conn = SubprocessConnection::spawn(
            external_command(cfg.subject.spec),
            {{kSeedEnvVar, std::to_string(trial.derive("subject", 0))}});
        ExternalSubjectSession session(std::move(conn), sid, reply,
                                       cfg.budget, cfg.timeout_ms);
        res.verdict = session.run();
        res.turns = res.verdict.turns_used;
        res.level = session.level();
        res.transcript = session.transcript();
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        res.aborted = true;
        res.abort_reason = e.what();
        res.verdict = Verdict{VerdictLabel::Undecided, 0.0, 0, "aborted"};
        res.turns = 0;
    }
    return res;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        throw ConfigError("config is not a JSON object");
    }
    ExperimentConfig cfg;
    if (auto it = j.find("trials_per_condition"); it != j.end()) {
        if (!it->is_number_integer()) {
            throw ConfigError("trials_per_condition must be an integer");
        }
        cfg.trials_per_condition = it->get<int>();
    }
    auto cond_it = j.find("conditions");
    if (cond_it == j.end() || !cond_it->is_array()) {
        throw ConfigError("conditions must be an array");
    }
    for (const auto& c : *cond_it) {
        if (!c.is_string()) throw ConfigError("conditions must be strings");
        auto cond = condition_from_string(c.get<std::string>());
        if (!cond) {
            throw ConfigError("unknown condition: " + c.get<std::string>());
        }
        cfg.conditions.push_back(*cond);
    }
    auto subj_it = j.find("subject");
    if (subj_it == j.end() || !subj_it->is_object()) {
        throw ConfigError("subject must be an object");
    }
    auto agent_it = subj_it->find("agent");
    if (agent_it == subj_it->end()) {
        throw ConfigError("subject.agent is required");
    }
    cfg.subject.spec = parse_agent_spec(*agent_it, "subject.agent");
    auto strat_it = subj_it->find("strategy");
    if (strat_it == subj_it->end()) {
        throw ConfigError("subject.strategy is required");
    }
    cfg.subject.strategy = parse_strategy(*strat_it, "subject.strategy");
    if (auto it = j.find("other_pool"); it != j.end()) {
        if (!it->is_array()) throw ConfigError("other_pool must be an array");
        int i = 0;
        for (const auto& a : *it) {
            cfg.other_pool.push_back(parse_agent_spec(
                a, "other_pool[" + std::to_string(i) + "]"));
            ++i;
        }
    }
    if (auto it = j.find("budget"); it != j.end()) {
        if (!it->is_number_integer()) {
            throw ConfigError("budget must be an integer");
        }
        cfg.budget = it->get<int>();
    }
    if (auto it = j.find("master_seed"); it != j.end()) {
        if (it->is_number_unsigned() || it->is_number_integer()) {
            cfg.master_seed = it->get<std::uint64_t>();
        } else if (it->is_string()) {
            cfg.master_seed = std::stoull(it->get<std::string>());
        } else {
            throw ConfigError("master_seed must be an integer");
        }
    }
    if (auto it = j.find("output_dir"); it != j.end()) {
        if (!it->is_string()) throw ConfigError("output_dir must be a string");
        cfg.output_dir = it->get<std::string>();
    }
    if (auto it = j.find("parallelism"); it != j.end()) {
        if (!it->is_number_integer()) {
            throw ConfigError("parallelism must be an integer");
        }
        cfg.parallelism = it->get<int>();
    }
    if (auto it = j.find("timeout_ms"); it != j.end()) {
        if (!it->is_number_integer()) {
            throw ConfigError("timeout_ms must be an integer");
        }
        cfg.timeout_ms = it->get<int>();
    }
    if (auto it = j.find("rebind_gate"); it != j.end()) {
        if (!it->is_boolean()) {
            throw ConfigError("rebind_gate must be a boolean");
        }
        cfg.rebind_gate = it->get<bool>();
    }
    if (auto it = j.find("channel"); it != j.end()) {
        cfg.channel = parse_channel(*it);
    }
    validate(cfg);
    return cfg;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
    std::ifstream f(path, std::ios::in | std::ios::binary);
    if (!f.is_open()) throw ConfigError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << f.rdbuf();
    return from_json_text(buf.str());
}

void validate(const ExperimentConfig& cfg) {
    if (cfg.trials_per_condition < 1) {
        throw ConfigError("trials_per_condition must be >= 1");
    }
    if (cfg.conditions.empty()) {
        throw ConfigError("conditions must not be empty");
    }
    if (cfg.budget < 2) throw ConfigError("budget must be >= 2");
    if (cfg.parallelism < 1) throw ConfigError("parallelism must be >= 1");
    if (cfg.timeout_ms < 1) throw ConfigError("timeout_ms must be >= 1");
    const bool has_other =
        std::find(cfg.conditions.begin(), cfg.conditions.end(),
                  Condition::Other) != cfg.conditions.end();
    if (has_other && cfg.other_pool.empty()) {
        throw ConfigError("condition 'other' needs a non-empty other_pool");
    }
    if (is_external(cfg.subject.spec)) {
        external_command(cfg.subject.spec);  // must parse
        if (std::find(cfg.conditions.begin(), cfg.conditions.end(),
                      Condition::SelfLoop) != cfg.conditions.end()) {
            throw ConfigError(
                "self_loop is not supported for external subjects");
        }
    }
}

std::optional<int> ConfusionMatrix::row_of(Condition c) {
    switch (c) {
        case Condition::Other: return 0;
        case Condition::Mimicker: return 1;
        case Condition::Mirror: return 2;
        case Condition::SelfLoop: return std::nullopt;
    }
    return std::nullopt;
}

int ConfusionMatrix::col_of(VerdictLabel v) {
    switch (v) {
        case VerdictLabel::Other: return 0;
        case VerdictLabel::Mimicker: return 1;
        case VerdictLabel::Mirror: return 2;
        case VerdictLabel::Undecided: return 3;
    }
    return 3;
}

int ConfusionMatrix::row_sum(int row) const {
    int sum = 0;
    for (int c = 0; c < 4; ++c) sum += counts[row][c];
    return sum;
}

int ConfusionMatrix::total() const {
    return row_sum(0) + row_sum(1) + row_sum(2);
}

std::optional<double> ConfusionMatrix::accuracy() const {
    const int n = total();
    if (n == 0) return std::nullopt;
    const int trace = counts[0][0] + counts[1][1] + counts[2][2];
    return static_cast<double>(trace) / static_cast<double>(n);
}

ConfusionMatrix score(const std::vector<TrialResult>& results) {
    ConfusionMatrix m;
    for (const auto& r : results) {
        if (r.aborted) {
            m.aborted += 1;
            continue;
        }
        auto row = ConfusionMatrix::row_of(r.condition);
        if (!row) continue;  // monologue trials carry no ground-truth label
        m.counts[*row][ConfusionMatrix::col_of(r.verdict.label)] += 1;
    }
    return m;
}

TrialResult run_trial(const ExperimentConfig& cfg, Condition condition,
                      int trial_index) {
    SeedTree root(cfg.master_seed);
    SeedTree trial =
        root.child(std::string(to_string(condition)), trial_index);
    const std::string sid = trial_name(condition, trial_index);
    if (is_external(cfg.subject.spec)) {
        return run_external_subject_trial(cfg, condition, trial_index, trial,
                                          sid);
    }
    return run_in_process_trial(cfg, condition, trial_index, trial, sid);
}

std::vector<TrialResult> run_all_trials(const ExperimentConfig& cfg) {
    validate(cfg);

    std::vector<std::pair<Condition, int>> plan;
    plan.reserve(cfg.conditions.size() *
                 static_cast<std::size_t>(cfg.trials_per_condition));
    for (Condition c : cfg.conditions) {
        for (int i = 0; i < cfg.trials_per_condition; ++i) {
            plan.emplace_back(c, i);
        }
    }
    // Execution order is shuffled by a derived seed; results are merged
    // back by (condition, trial) so output never depends on scheduling.
    SeedTree root(cfg.master_seed);
    SplitMix64 shuffle_rng(root.derive("schedule", 0));
    for (std::size_t i = plan.size(); i > 1; --i) {
        std::swap(plan[i - 1], plan[shuffle_rng.next_below(i)]);
    }

    std::vector<TrialResult> results(plan.size());
    const int workers = std::max(
        1, std::min(cfg.parallelism, static_cast<int>(plan.size())));
    if (workers == 1) {
        for (std::size_t k = 0; k < plan.size(); ++k) {
            results[k] = run_trial(cfg, plan[k].first, plan[k].second);
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::mutex error_mutex;
        std::exception_ptr first_error;
        auto work = [&] {
            while (true) {
                std::size_t k = next.fetch_add(1);
                if (k >= plan.size()) return;
                try {
                    results[k] =
                        run_trial(cfg, plan[k].first, plan[k].second);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                    return;
                }
            }
        };
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(workers));
        for (int w = 0; w < workers; ++w) pool.emplace_back(work);
        for (auto& t : pool) t.join();
        if (first_error) std::rethrow_exception(first_error);
    }

    std::sort(results.begin(), results.end(),
              [](const TrialResult& a, const TrialResult& b) {
                  if (a.condition != b.condition) {
                      return static_cast<int>(a.condition) <
                             static_cast<int>(b.condition);
                  }
                  return a.trial_index < b.trial_index;
              });
    return results;
}

std::string results_csv(const std::vector<TrialResult>& results) {
    std::string out = "condition,verdict,confidence,turns,level,aborted\n";
    for (const auto& r : results) {
        char conf[32];
        std::snprintf(conf, sizeof conf, "%.9f",
                      r.aborted ? 0.0 : r.verdict.confidence);
        out += std::string(to_string(r.condition)) + ',';
        out += r.aborted ? "none" : std::string(to_string(r.verdict.label));
        out += ',';
        out += conf;
        out += ',';
        out += std::to_string(r.turns);
        out += ',';
        out += std::string(to_string(r.level));
        out += ',';
        out += r.aborted ? "true" : "false";
        out += '\n';
    }
    return out;
}

std::string evidence_jsonl(const std::vector<TurnRecord>& records) {
    std::string out;
    for (const auto& rec : records) {
        ordered_json line;
        line["turn"] = rec.exchange_index;
        line["log_likelihoods"] = {{"mirror", rec.log_likelihoods.mirror},
                                   {"mimicker", rec.log_likelihoods.mimicker},
                                   {"other", rec.log_likelihoods.other}};
        line["level"] = std::string(to_string(rec.level));
        if (rec.verdict) {
            ordered_json v;
            v["label"] = std::string(to_string(rec.verdict->label));
            v["confidence"] = rec.verdict->confidence;
            v["turns_used"] = rec.verdict->turns_used;
            if (!rec.verdict->reason.empty()) {
                v["reason"] = rec.verdict->reason;
            }
            line["verdict"] = v;
        }
        out += line.dump();
        out += '\n';
    }
    return out;
}

Summary summarize(const std::vector<TrialResult>& results) {
    Summary s;
    s.matrix = score(results);
    s.total_trials = static_cast<int>(results.size());
    s.aborted_trials = s.matrix.aborted;
    std::map<Condition, std::pair<double, int>> turns;
    for (const auto& r : results) {
        if (r.aborted) continue;
        auto& [sum, n] = turns[r.condition];
        sum += static_cast<double>(r.verdict.turns_used);
        n += 1;
    }
    for (const auto& [cond, acc] : turns) {
        if (acc.second > 0) {
            s.mean_turns_to_verdict[cond] = acc.first / acc.second;
        }
    }
    return s;
}

std::string summary_json(const Summary& summary) {
    ordered_json j;
    j["total_trials"] = summary.total_trials;
    j["aborted_trials"] = summary.aborted_trials;
    if (auto acc = summary.matrix.accuracy()) {
        j["accuracy"] = *acc;
    } else {
        j["accuracy"] = nullptr;
    }
    const char* row_names[3] = {"other", "mimicker", "mirror"};
    const char* col_names[4] = {"other", "mimicker", "mirror", "undecided"};
    ordered_json matrix;
    for (int r = 0; r < 3; ++r) {
        ordered_json row;
        for (int c = 0; c < 4; ++c) {
            row[col_names[c]] = summary.matrix.counts[r][c];
        }
        matrix[row_names[r]] = row;
    }
    j["confusion_matrix"] = matrix;
    ordered_json means;
    for (const auto& [cond, mean] : summary.mean_turns_to_verdict) {
        means[std::string(to_string(cond))] = mean;
    }
    j["mean_turns_to_verdict"] = means;
    return j.dump(2) + "\n";
}

Summary run_experiment(const ExperimentConfig& cfg) {
    validate(cfg);
    if (cfg.output_dir.empty()) {
        throw ConfigError("run_experiment needs an output_dir");
    }
    namespace fs = std::filesystem;
    const fs::path out_dir(cfg.output_dir);
    std::error_code ec;
    fs::create_directories(out_dir / "transcripts", ec);
    fs::create_directories(out_dir / "evidence", ec);
    if (ec) {
        throw ConfigError("cannot create output_dir: " + out_dir.string());
    }

    std::vector<TrialResult> results = run_all_trials(cfg);
    for (auto& r : results) {
        const std::string name = trial_name(r.condition, r.trial_index);
        if (!r.transcript.empty()) {
            const fs::path path = out_dir / "transcripts" / (name + ".jsonl");
            write_file(path, transcript_to_jsonl(r.transcript));
            r.transcript_path = path.string();
        }
        if (!r.records.empty()) {
            write_file(out_dir / "evidence" / (name + ".jsonl"),
                       evidence_jsonl(r.records));
        }
    }
    write_file(out_dir / "results.csv", results_csv(results));
    Summary summary = summarize(results);
    write_file(out_dir / "summary.json", summary_json(summary));
    return summary;
}

}  // namespace textmirror
