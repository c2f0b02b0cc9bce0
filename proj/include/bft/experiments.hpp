#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bft/assembly.hpp"
#include "bft/bank.hpp"
#include "bft/dataset.hpp"
#include "bft/net.hpp"
#include "bft/train.hpp"

namespace bft {

enum class Protocol { Scratch, Bft, Net, NetShuffled };

const char* protocol_name(Protocol p);
Protocol protocol_from_name(const std::string& name);

struct ExperimentConfig {
    std::string arch = "snet";
    int apex_layer = 3;   // k
    int num_trees = 32;   // n, sampled per BFT trial
    Protocol protocol = Protocol::Scratch;
    Hyper hyper;          // hyper.seed is ignored; trials derive their own seeds
    int trials = 5;
    uint64_t master_seed = 0;
    bool shuffle_consistent = false;   // NetShuffled flavor
    double threshold_offset = 0.02;    // threshold = scratch mean - offset
};

struct TrialResult {
    uint64_t seed = 0;  // master_seed + trial index
    double final_acc = 0.0;
    std::optional<long> iters_to_threshold;
    TrainHistory history;
};

struct RunReport {
    ExperimentConfig config;
    std::string task_name;
    std::string env_stamp;
    std::optional<double> threshold;
    std::vector<TrialResult> trials;
    double mean = 0.0;
    double stddev = 0.0;  // sample (n-1) estimator; 0 for a single trial
};

double mean_of(const std::vector<double>& xs);
double sample_stddev(const std::vector<double>& xs);

// Static build description embedded in reports (no clocks, no hostnames —
// reports stay byte-identical across reruns).
std::string env_stamp();

// First eval iteration whose accuracy reaches the threshold, if any.
std::optional<long> iterations_to_accuracy(const TrainHistory& history, double threshold);

// Fills iters_to_threshold for every trial and records the threshold used.
void apply_threshold(RunReport& report, double threshold);

// Runs `config.trials` seeded repetitions of one protocol on one task.
// Non-scratch protocols draw frozen prefixes from `sources` (bank of all of
// them for Bft; rotation source[trial % count] for Net/NetShuffled). For the
// scratch protocol, `trained_out`, when given, receives each trial's trained
// parameters.
RunReport run_protocol(const ExperimentConfig& config, const Task& target_task,
                       const std::vector<SourceNet>& sources,
                       std::vector<NetParams>* trained_out = nullptr);

struct ScratchSweep {
    std::vector<RunReport> reports;  // one per task, in task order
    std::vector<SourceNet> sources;  // trial-0 trained net per task
};

// Scratch runs for every task; each task's trial-0 net doubles as its source
// net for the other tasks' transfer protocols.
ScratchSweep run_scratch_all(const std::vector<Task>& tasks, const ExperimentConfig& base);

// Full leave-one-out sweep: scratch per task, then each requested non-scratch
// protocol per task with the remaining tasks' nets as sources. Thresholds are
// per-task scratch mean minus the configured offset, applied to every report.
std::vector<RunReport> run_experiment(const std::vector<Task>& tasks, const ExperimentConfig& base,
                                      const std::vector<Protocol>& protocols);

// format "json": report objects (bare object for a single report, array
// otherwise) plus a <stem>.curves.csv with (task, protocol, trial, iteration,
// accuracy) rows. format "csv": one row per (protocol, task, trial).
void emit_report(const std::vector<RunReport>& reports, const std::string& path,
                 const std::string& format);

}  // namespace bft
