#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "textmirror/agents.hpp"
#include "textmirror/core.hpp"
#include "textmirror/recognition.hpp"
#include "textmirror/wiring.hpp"

// Config-driven experiment runner: seeds and executes trials across
// conditions (optionally in parallel), persists transcripts, evidence
// sidecars, per-trial CSV rows, and a summary with the confusion matrix.

namespace textmirror {

struct SubjectConfig {
    AgentSpec spec;
    StrategyConfig strategy;
};

struct ExperimentConfig {
    int trials_per_condition = 1;
    std::vector<Condition> conditions;
    SubjectConfig subject;
    std::vector<AgentSpec> other_pool;
    int budget = 30;
    std::uint64_t master_seed = 0;
    std::string output_dir;
    int parallelism = 1;
    int timeout_ms = 5000;  // external agents only
    bool rebind_gate = true;
    ChannelConfig channel{};

    /// Parses the documented JSON schema; throws ConfigError on any
    /// missing or ill-typed key.
    static ExperimentConfig from_json_text(const std::string& text);
    static ExperimentConfig from_file(const std::string& path);
};

/// Validates cross-field invariants (trial counts, pool presence, budget).
void validate(const ExperimentConfig& cfg);

struct TrialResult {
    Condition condition = Condition::Mirror;
    int trial_index = 0;
    Verdict verdict;
    int turns = 0;
    RecognitionLevel level = RecognitionLevel::L0;
    bool aborted = false;
    std::string abort_reason;
    std::string transcript_path;  // filled in once persisted
    Transcript transcript;
    std::vector<TurnRecord> records;  // per-exchange evidence trail
};

/// Rows: true condition (Other, Mimicker, Mirror); columns: verdict label
/// (Other, Mimicker, Mirror, Undecided). Aborted trials are counted
/// separately and never enter the matrix.
struct ConfusionMatrix {
    std::array<std::array<int, 4>, 3> counts{};
    int aborted = 0;

    static std::optional<int> row_of(Condition c);
    static int col_of(VerdictLabel v);

    int row_sum(int row) const;
    int total() const;

    /// Fraction of completed trials whose verdict names the true
    /// condition; std::nullopt when no trial completed.
    std::optional<double> accuracy() const;
};

ConfusionMatrix score(const std::vector<TrialResult>& results);

struct Summary {
    ConfusionMatrix matrix;
    std::map<Condition, double> mean_turns_to_verdict;  // completed trials
    int total_trials = 0;
    int aborted_trials = 0;
};

/// Runs one seeded trial. Counterpart crashes, timeouts, and protocol
/// breaches mark the trial aborted instead of propagating.
TrialResult run_trial(const ExperimentConfig& cfg, Condition condition,
                      int trial_index);

/// Runs every (condition, trial) cell — execution order shuffled by a
/// derived seed, results merged back into (condition, trial) order —
/// and writes transcripts/, evidence/, results.csv, and summary.json
/// under cfg.output_dir.
Summary run_experiment(const ExperimentConfig& cfg);

/// In-memory variant used by tests: runs all trials (honoring
/// cfg.parallelism) without touching the filesystem.
std::vector<TrialResult> run_all_trials(const ExperimentConfig& cfg);

/// Deterministic renderings of the outputs.
std::string results_csv(const std::vector<TrialResult>& results);
std::string summary_json(const Summary& summary);

/// Per-exchange evidence sidecar (one JSON line per turn).
std::string evidence_jsonl(const std::vector<TurnRecord>& records);

Summary summarize(const std::vector<TrialResult>& results);

}  // namespace textmirror
