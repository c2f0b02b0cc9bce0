#include "bft/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <stdexcept>
#include <utility>

#include <nlohmann/json.hpp>

#include "bft/rng.hpp"

namespace bft {

using nlohmann::json;

const char* protocol_name(Protocol p) {
    switch (p) {
        case Protocol::Scratch: return "scratch";
        case Protocol::Bft: return "bft";
        case Protocol::Net: return "net";
        case Protocol::NetShuffled: return "net-shuffled";
    }
    throw std::logic_error("unreachable protocol");
}

Protocol protocol_from_name(const std::string& name) {
    if (name == "scratch") return Protocol::Scratch;
    if (name == "bft") return Protocol::Bft;
    if (name == "net") return Protocol::Net;
    if (name == "net-shuffled") return Protocol::NetShuffled;
    throw std::invalid_argument("unknown protocol '" + name + "'");
}

double mean_of(const std::vector<double>& xs) {
    if (xs.empty()) throw std::invalid_argument("mean_of: empty");
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

double sample_stddev(const std::vector<double>& xs) {
    if (xs.empty()) throw std::invalid_argument("sample_stddev: empty");
    if (xs.size() == 1) return 0.0;
    const double m = mean_of(xs);
    double s = 0.0;
    for (double x : xs) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(xs.size() - 1));
}

std::string env_stamp() {
    return std::string("cxx ") + __VERSION__ + "; float32 storage, double accumulation";
}

std::optional<long> iterations_to_accuracy(const TrainHistory& history, double threshold) {
    for (const EvalPoint& e : history.evals)
        if (e.accuracy >= threshold) return e.iteration;
    return std::nullopt;
}

void apply_threshold(RunReport& report, double threshold) {
    report.threshold = threshold;
    for (TrialResult& t : report.trials)
        t.iters_to_threshold = iterations_to_accuracy(t.history, threshold);
}

namespace {

NetSpec arch_spec(const std::string& arch, int num_classes) {
    if (arch == "snet") return snet_spec(num_classes);
    throw std::invalid_argument("unknown architecture '" + arch + "'");
}

// seed roles under a trial seed: 1 = net init, 2 = batch order (inside
// train()), 3 = bank selection, 4 = head init, 5 = shuffle permutations
constexpr uint64_t kRoleInit = 1;
constexpr uint64_t kRoleSelection = 3;
constexpr uint64_t kRoleHead = 4;
constexpr uint64_t kRolePerm = 5;

}  // namespace

RunReport run_protocol(const ExperimentConfig& config, const Task& target_task,
                       const std::vector<SourceNet>& sources,
                       std::vector<NetParams>* trained_out) {
    if (config.trials <= 0) throw std::invalid_argument("run_protocol: non-positive trial count");
    if (config.protocol != Protocol::Scratch && sources.empty())
        throw std::invalid_argument("run_protocol: protocol requires trained source nets");

    RunReport report;
    report.config = config;
    report.task_name = target_task.spec.name;
    report.env_stamp = env_stamp();

    const NetSpec arch = arch_spec(config.arch, target_task.train.num_classes);
    FilterBank bank;
    if (config.protocol == Protocol::Bft) bank = build_bank(sources, config.apex_layer);

    std::vector<double> finals;
    for (int t = 0; t < config.trials; ++t) {
        const uint64_t trial_seed = config.master_seed + static_cast<uint64_t>(t);
        Hyper hyper = config.hyper;
        hyper.seed = trial_seed;
        TrialResult trial;
        trial.seed = trial_seed;
        switch (config.protocol) {
            case Protocol::Scratch: {
                NetParams params = init_net(arch, sub_seed(trial_seed, kRoleInit));
                trial.history = train(arch, params, 0, target_task.train, target_task.test, hyper);
                trial.final_acc = trial.history.evals.empty()
                                      ? evaluate(arch, params, target_task.test)
                                      : trial.history.evals.back().accuracy;
                if (trained_out) trained_out->push_back(std::move(params));
                break;
            }
            case Protocol::Bft: {
                const Selection sel =
                    sample(bank, config.num_trees, sub_seed(trial_seed, kRoleSelection));
                TargetNet target =
                    assemble_target(fuse(bank, sel), tail_after_conv(arch, config.apex_layer),
                                    sub_seed(trial_seed, kRoleHead));
                trial.history = train_target(target, target_task.train, target_task.test, hyper);
                trial.final_acc = trial.history.evals.empty()
                                      ? target_accuracy(target, target_task.test)
                                      : trial.history.evals.back().accuracy;
                break;
            }
            case Protocol::Net:
            case Protocol::NetShuffled: {
                const SourceNet& src = sources[static_cast<size_t>(t) % sources.size()];
                NetParams sparams = src.params;
                if (config.protocol == Protocol::NetShuffled) {
                    // The destructive flavor draws derangements so every
                    // channel is misrouted; a plain permutation of a small
                    // filter bank often leaves some channels in place.
                    Rng perm_rng(mix64(sub_seed(trial_seed, kRolePerm)));
                    for (int l = 1; l < config.apex_layer; ++l) {
                        const int count =
                            src.spec.conv_filter_counts[static_cast<size_t>(l - 1)];
                        const std::vector<int> perm =
                            config.shuffle_consistent ? random_permutation(count, perm_rng)
                                                      : random_derangement(count, perm_rng);
                        sparams = shuffle_filters(src.spec, sparams, l, perm,
                                                  config.shuffle_consistent);
                    }
                }
                TargetNet target =
                    network_transfer_init(src.spec, sparams, config.apex_layer,
                                          sub_seed(trial_seed, kRoleHead), src.source_id);
                trial.history = train_target(target, target_task.train, target_task.test, hyper);
                trial.final_acc = trial.history.evals.empty()
                                      ? target_accuracy(target, target_task.test)
                                      : trial.history.evals.back().accuracy;
                break;
            }
        }
        finals.push_back(trial.final_acc);
        report.trials.push_back(std::move(trial));
    }
    report.mean = mean_of(finals);
    report.stddev = sample_stddev(finals);
    return report;
}

ScratchSweep run_scratch_all(const std::vector<Task>& tasks, const ExperimentConfig& base) {
    if (tasks.empty()) throw std::invalid_argument("run_scratch_all: no tasks");
    ScratchSweep sweep;
    for (const Task& task : tasks) {
        ExperimentConfig cfg = base;
        cfg.protocol = Protocol::Scratch;
        std::vector<NetParams> trained;
        RunReport report = run_protocol(cfg, task, {}, &trained);
        SourceNet source;
        source.spec = arch_spec(base.arch, task.train.num_classes);
        source.params = std::move(trained.front());
        source.source_id = "src-" + task.spec.name;
        source.task_label = task.spec.name;
        sweep.sources.push_back(std::move(source));
        sweep.reports.push_back(std::move(report));
    }
    return sweep;
}

std::vector<RunReport> run_experiment(const std::vector<Task>& tasks, const ExperimentConfig& base,
                                      const std::vector<Protocol>& protocols) {
    const bool has_transfer =
        std::any_of(protocols.begin(), protocols.end(),
                    [](Protocol p) { return p != Protocol::Scratch; });
    if (has_transfer && tasks.size() < 2)
        throw std::invalid_argument("run_experiment: transfer protocols need at least two tasks");

    ScratchSweep sweep = run_scratch_all(tasks, base);
    std::vector<double> thresholds;
    thresholds.reserve(tasks.size());
    for (const RunReport& r : sweep.reports)
        thresholds.push_back(r.mean - base.threshold_offset);
    for (size_t i = 0; i < sweep.reports.size(); ++i)
        apply_threshold(sweep.reports[i], thresholds[i]);

    std::vector<RunReport> reports = std::move(sweep.reports);
    for (Protocol p : protocols) {
        if (p == Protocol::Scratch) continue;  // already run
        for (size_t i = 0; i < tasks.size(); ++i) {
            std::vector<SourceNet> others;
            for (size_t j = 0; j < tasks.size(); ++j)
                if (j != i) others.push_back(sweep.sources[j]);
            ExperimentConfig cfg = base;
            cfg.protocol = p;
            RunReport report = run_protocol(cfg, tasks[i], others);
            apply_threshold(report, thresholds[i]);
            reports.push_back(std::move(report));
        }
    }
    return reports;
}

namespace {

json report_to_json(const RunReport& r) {
    json per_trial = json::array();
    for (const TrialResult& t : r.trials) {
        json curve = json::array();
        for (const EvalPoint& e : t.history.evals)
            curve.push_back(json::array({e.iteration, e.accuracy}));
        json tj = {{"seed", t.seed}, {"final_acc", t.final_acc}, {"curve", curve}};
        tj["iters_to_threshold"] =
            t.iters_to_threshold ? json(*t.iters_to_threshold) : json(nullptr);
        per_trial.push_back(std::move(tj));
    }
    const json cfg = {{"arch", r.config.arch},
                      {"apex_layer", r.config.apex_layer},
                      {"n", r.config.num_trees},
                      {"protocol", protocol_name(r.config.protocol)},
                      {"trials", r.config.trials},
                      {"master_seed", r.config.master_seed},
                      {"shuffle_consistent", r.config.shuffle_consistent},
                      {"threshold_offset", r.config.threshold_offset},
                      {"hyper",
                       {{"lr", r.config.hyper.lr},
                        {"momentum", r.config.hyper.momentum},
                        {"batch", r.config.hyper.batch},
                        {"iterations", r.config.hyper.iterations},
                        {"eval_every", r.config.hyper.eval_every}}}};
    json out = {{"config", cfg},
                {"task", r.task_name},
                {"env", r.env_stamp},
                {"per_trial", per_trial},
                {"summary", {{"mean", r.mean}, {"std", r.stddev}}}};
    if (r.threshold) out["threshold"] = *r.threshold;
    return out;
}

}  // namespace

void emit_report(const std::vector<RunReport>& reports, const std::string& path,
                 const std::string& format) {
    if (reports.empty()) throw std::invalid_argument("emit_report: no reports");
    if (format == "json") {
        json doc;
        if (reports.size() == 1) {
            doc = report_to_json(reports.front());
        } else {
            doc = json::array();
            for (const RunReport& r : reports) doc.push_back(report_to_json(r));
        }
        std::ofstream out(path);
        if (!out) throw std::runtime_error("emit_report: cannot write " + path);
        out << doc.dump(2) << "\n";
        if (!out) throw std::runtime_error("emit_report: write failure on " + path);
    } else if (format == "csv") {
        std::ofstream out(path);
        if (!out) throw std::runtime_error("emit_report: cannot write " + path);
        out << std::setprecision(17);
        out << "protocol,task,trial,seed,final_acc,iters_to_threshold\n";
        for (const RunReport& r : reports) {
            for (size_t t = 0; t < r.trials.size(); ++t) {
                const TrialResult& trial = r.trials[t];
                out << protocol_name(r.config.protocol) << ',' << r.task_name << ',' << t << ','
                    << trial.seed << ',' << trial.final_acc << ',';
                if (trial.iters_to_threshold) out << *trial.iters_to_threshold;
                out << '\n';
            }
        }
        if (!out) throw std::runtime_error("emit_report: write failure on " + path);
    } else {
        throw std::invalid_argument("emit_report: unknown format '" + format + "'");
    }

    std::filesystem::path curves(path);
    curves.replace_extension();
    curves += ".curves.csv";
    std::ofstream cout_(curves);
    if (!cout_) throw std::runtime_error("emit_report: cannot write " + curves.string());
    cout_ << std::setprecision(17);
    cout_ << "task,protocol,trial,iteration,accuracy\n";
    for (const RunReport& r : reports)
        for (size_t t = 0; t < r.trials.size(); ++t)
            for (const EvalPoint& e : r.trials[t].history.evals)
                cout_ << r.task_name << ',' << protocol_name(r.config.protocol) << ',' << t << ','
                      << e.iteration << ',' << e.accuracy << '\n';
    if (!cout_) throw std::runtime_error("emit_report: write failure on " + curves.string());
}

}  // namespace bft
