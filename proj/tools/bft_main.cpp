// Command-line front end: train source nets, pool filter-trees into banks,
// assemble frozen-prefix target nets, run transfer baselines and the full
// leave-one-out experiment sweep.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "bft/assembly.hpp"
#include "bft/bank.hpp"
#include "bft/dataset.hpp"
#include "bft/experiments.hpp"
#include "bft/rng.hpp"
#include "bft/serial.hpp"
#include "bft/train.hpp"

namespace {

using nlohmann::json;

// Task description file: JSON with IDX paths (or a synthetic block), the
// ordered class subset, and per-class split sizes.
struct TaskFile {
    bft::Task task;
};

bft::LabeledSet load_set_from_json(const json& j, const char* images_key, const char* labels_key,
                                   int per_class_hint, uint64_t synth_tag) {
    if (j.contains("synthetic")) {
        const json& s = j.at("synthetic");
        const int per_class = s.value("per_class", per_class_hint);
        const uint64_t seed = s.value("seed", static_cast<uint64_t>(7));
        return bft::make_stroke_dataset(per_class, bft::sub_seed(seed, synth_tag));
    }
    return bft::load_idx_dataset(j.at(images_key).get<std::string>(),
                                 j.at(labels_key).get<std::string>());
}

bft::Task load_task_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open task file " + path);
    const json j = json::parse(in);
    const std::vector<int> classes = j.at("classes").get<std::vector<int>>();
    const int train_pc = j.at("train_per_class").get<int>();
    const int test_pc = j.at("test_per_class").get<int>();
    const bft::LabeledSet train_all = load_set_from_json(j, "train_images", "train_labels",
                                                         train_pc, 11);
    const bft::LabeledSet test_all = load_set_from_json(j, "test_images", "test_labels",
                                                        test_pc, 12);
    std::vector<bft::Task> tasks =
        bft::make_disjoint_tasks(train_all, test_all, {classes}, train_pc, test_pc);
    bft::Task task = std::move(tasks.front());
    if (j.contains("name")) task.spec.name = j.at("name").get<std::string>();
    return task;
}

struct HyperOpts {
    bft::Hyper hyper;
    void add_to(CLI::App* cmd) {
        cmd->add_option("--iters", hyper.iterations, "training iterations");
        cmd->add_option("--lr", hyper.lr, "learning rate");
        cmd->add_option("--momentum", hyper.momentum, "SGD momentum");
        cmd->add_option("--batch", hyper.batch, "mini-batch size");
        cmd->add_option("--eval-every", hyper.eval_every, "evaluation period (iterations)");
    }
};

void print_history_tail(const bft::TrainHistory& history) {
    if (history.evals.empty()) return;
    const bft::EvalPoint& last = history.evals.back();
    std::cout << "{\"iteration\":" << last.iteration << ",\"final_acc\":" << last.accuracy << "}\n";
}

int cmd_train(const std::string& task_path, const std::string& arch, const std::string& out,
              uint64_t seed, HyperOpts& opts) {
    if (arch != "snet") throw std::invalid_argument("unknown architecture '" + arch + "'");
    const bft::Task task = load_task_file(task_path);
    const bft::NetSpec spec = bft::snet_spec(task.train.num_classes);
    bft::NetParams params = bft::init_net(spec, bft::sub_seed(seed, 1));
    params.rng_seed = seed;
    opts.hyper.seed = seed;
    const bft::TrainHistory history =
        bft::train(spec, params, 0, task.train, task.test, opts.hyper);
    bft::save_net(spec, params, out);
    print_history_tail(history);
    return 0;
}

int cmd_extract_bank(const std::string& nets_csv, int layer, const std::string& out) {
    std::vector<bft::SourceNet> sources;
    std::string item;
    std::stringstream ss(nets_csv);
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        auto [spec, params] = bft::load_net(item);
        bft::SourceNet s;
        s.spec = std::move(spec);
        s.params = std::move(params);
        s.source_id = std::filesystem::path(item).stem().string();
        s.task_label = "";
        sources.push_back(std::move(s));
    }
    if (sources.empty()) throw std::invalid_argument("--nets lists no files");
    const bft::FilterBank bank = bft::build_bank(sources, layer);
    bft::save_bank(bank, out);
    std::cout << "{\"entries\":" << bank.entries.size() << ",\"sources\":" << bank.sources.size()
              << "}\n";
    return 0;
}

int cmd_assemble(const std::string& bank_path, int n, uint64_t seed, const std::string& head,
                 int classes, const std::string& out) {
    if (head != "snet-tail") throw std::invalid_argument("unknown head '" + head + "'");
    const bft::FilterBank bank = bft::load_bank(bank_path);
    const bft::Selection sel = bft::sample(bank, n, bft::sub_seed(seed, 3));
    const bft::AssembledPrefix prefix = bft::fuse(bank, sel);
    const std::vector<bft::LayerSpec> tail =
        bft::tail_after_conv(bft::snet_spec(classes), bank.apex_layer);
    const bft::TargetNet target = bft::assemble_target(prefix, tail, bft::sub_seed(seed, 4));
    bft::save_target(target, out);
    std::cout << "{\"branches\":" << target.prefix.branches.size()
              << ",\"channels\":" << target.prefix.apexes.size() << "}\n";
    return 0;
}

int cmd_transfer_train(const std::string& target_path, const std::string& task_path,
                       const std::string& out, uint64_t seed, HyperOpts& opts) {
    bft::TargetNet target = bft::load_target(target_path);
    const bft::Task task = load_task_file(task_path);
    opts.hyper.seed = seed;
    const bft::TrainHistory history =
        bft::train_target(target, task.train, task.test, opts.hyper);
    if (!out.empty()) bft::save_target(target, out);
    print_history_tail(history);
    return 0;
}

int cmd_baseline_net(const std::string& source_path, int layer, const std::string& shuffle,
                     uint64_t perm_seed, const std::string& task_path, uint64_t seed,
                     const std::string& out, HyperOpts& opts) {
    auto [spec, params] = bft::load_net(source_path);
    if (!shuffle.empty()) {
        const bool consistent = shuffle == "consistent";
        if (!consistent && shuffle != "destructive")
            throw std::invalid_argument("--shuffle must be 'consistent' or 'destructive'");
        bft::Rng perm_rng(bft::mix64(bft::sub_seed(perm_seed, 5)));
        for (int l = 1; l < layer; ++l) {
            const std::vector<int> perm = bft::random_permutation(
                spec.conv_filter_counts[static_cast<size_t>(l - 1)], perm_rng);
            params = bft::shuffle_filters(spec, params, l, perm, consistent);
        }
    }
    const bft::Task task = load_task_file(task_path);
    bft::TargetNet target =
        bft::network_transfer_init(spec, params, layer, bft::sub_seed(seed, 4),
                                   std::filesystem::path(source_path).stem().string());
    opts.hyper.seed = seed;
    const bft::TrainHistory history =
        bft::train_target(target, task.train, task.test, opts.hyper);
    if (!out.empty()) bft::save_target(target, out);
    print_history_tail(history);
    return 0;
}

int cmd_eval(const std::string& net_path, const std::string& task_path) {
    const bft::Task task = load_task_file(task_path);
    double acc = 0.0;
    if (bft::peek_net_kind(net_path) == "target") {
        const bft::TargetNet target = bft::load_target(net_path);
        acc = bft::target_accuracy(target, task.test);
    } else {
        const auto [spec, params] = bft::load_net(net_path);
        acc = bft::evaluate(spec, params, task.test);
    }
    std::cout << "{\"accuracy\":" << acc << "}\n";
    return 0;
}

int cmd_experiment(const std::string& config_path, const std::string& out) {
    std::ifstream in(config_path);
    if (!in) throw std::runtime_error("cannot open config file " + config_path);
    const json j = json::parse(in);

    const int train_pc = j.at("train_per_class").get<int>();
    const int test_pc = j.at("test_per_class").get<int>();
    const bft::LabeledSet train_all = load_set_from_json(j, "train_images", "train_labels",
                                                         train_pc, 11);
    const bft::LabeledSet test_all = load_set_from_json(j, "test_images", "test_labels",
                                                        test_pc, 12);
    const auto subsets = j.at("subsets").get<std::vector<std::vector<int>>>();
    const std::vector<bft::Task> tasks =
        bft::make_disjoint_tasks(train_all, test_all, subsets, train_pc, test_pc);

    bft::ExperimentConfig base;
    base.arch = j.value("arch", std::string("snet"));
    base.apex_layer = j.value("apex_layer", 3);
    base.num_trees = j.value("n", 32);
    base.trials = j.value("trials", 5);
    base.master_seed = j.value("master_seed", static_cast<uint64_t>(0));
    base.threshold_offset = j.value("threshold_offset", 0.02);
    base.shuffle_consistent = j.value("shuffle_consistent", false);
    if (j.contains("hyper")) {
        const json& h = j.at("hyper");
        base.hyper.lr = h.value("lr", base.hyper.lr);
        base.hyper.momentum = h.value("momentum", base.hyper.momentum);
        base.hyper.batch = h.value("batch", base.hyper.batch);
        base.hyper.iterations = h.value("iterations", base.hyper.iterations);
        base.hyper.eval_every = h.value("eval_every", base.hyper.eval_every);
    }
    std::vector<bft::Protocol> protocols = {bft::Protocol::Bft, bft::Protocol::Net};
    if (j.contains("protocols")) {
        protocols.clear();
        for (const json& p : j.at("protocols"))
            protocols.push_back(bft::protocol_from_name(p.get<std::string>()));
    }

    const std::vector<bft::RunReport> reports = bft::run_experiment(tasks, base, protocols);
    bft::emit_report(reports, out, j.value("format", std::string("json")));
    std::cout << "{\"reports\":" << reports.size() << ",\"out\":\"" << out << "\"}\n";
    return 0;
}

int cmd_gen_data(const std::string& out_dir, int train_per_class, int test_per_class,
                 uint64_t seed) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    const bft::LabeledSet train = bft::make_stroke_dataset(train_per_class, bft::sub_seed(seed, 11));
    const bft::LabeledSet test = bft::make_stroke_dataset(test_per_class, bft::sub_seed(seed, 12));
    const fs::path dir(out_dir);
    bft::save_idx_dataset(train, (dir / "train-images.idx").string(),
                          (dir / "train-labels.idx").string());
    bft::save_idx_dataset(test, (dir / "test-images.idx").string(),
                          (dir / "test-labels.idx").string());
    std::cout << "{\"train\":" << train.size() << ",\"test\":" << test.size() << "}\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"filter-tree transfer toolkit"};
    app.require_subcommand(1);

    // train
    auto* train_cmd = app.add_subcommand("train", "train a network from scratch on a task");
    std::string train_task, train_arch = "snet", train_out;
    uint64_t train_seed = 0;
    HyperOpts train_opts;
    train_cmd->add_option("--task", train_task, "task spec JSON")->required();
    train_cmd->add_option("--arch", train_arch, "architecture id");
    train_cmd->add_option("--out", train_out, "output .cnn path")->required();
    train_cmd->add_option("--seed", train_seed, "seed (drives init and batch order)");
    train_opts.add_to(train_cmd);

    // extract-bank
    auto* bank_cmd = app.add_subcommand("extract-bank", "pool filter-trees from trained nets");
    std::string bank_nets, bank_out;
    int bank_layer = 3;
    bank_cmd->add_option("--nets", bank_nets, "comma-separated .cnn files")->required();
    bank_cmd->add_option("--layer", bank_layer, "apex conv layer");
    bank_cmd->add_option("--out", bank_out, "output .bft path")->required();

    // assemble
    auto* asm_cmd = app.add_subcommand("assemble", "sample trees and fuse a target prefix");
    std::string asm_bank, asm_head = "snet-tail", asm_out;
    int asm_n = 32, asm_classes = 2;
    uint64_t asm_seed = 0;
    asm_cmd->add_option("--bank", asm_bank, "input .bft path")->required();
    asm_cmd->add_option("--n", asm_n, "trees to sample");
    asm_cmd->add_option("--seed", asm_seed, "selection/head seed");
    asm_cmd->add_option("--head", asm_head, "head architecture (snet-tail)");
    asm_cmd->add_option("--classes", asm_classes, "target class count");
    asm_cmd->add_option("--out", asm_out, "output .cnn path")->required();

    // transfer-train
    auto* tt_cmd = app.add_subcommand("transfer-train", "train a target net's head");
    std::string tt_target, tt_task, tt_out;
    uint64_t tt_seed = 0;
    HyperOpts tt_opts;
    tt_cmd->add_option("--target", tt_target, "input target .cnn")->required();
    tt_cmd->add_option("--task", tt_task, "task spec JSON")->required();
    tt_cmd->add_option("--out", tt_out, "output .cnn path");
    tt_cmd->add_option("--seed", tt_seed, "seed (batch order)");
    tt_opts.add_to(tt_cmd);

    // baseline-net
    auto* bn_cmd = app.add_subcommand("baseline-net", "conventional network-transfer baseline");
    std::string bn_source, bn_shuffle, bn_task, bn_out;
    int bn_layer = 3;
    uint64_t bn_perm_seed = 0, bn_seed = 0;
    HyperOpts bn_opts;
    bn_cmd->add_option("--source", bn_source, "source .cnn")->required();
    bn_cmd->add_option("--layer", bn_layer, "frozen depth k");
    bn_cmd->add_option("--shuffle", bn_shuffle, "consistent|destructive");
    bn_cmd->add_option("--perm-seed", bn_perm_seed, "shuffle permutation seed");
    bn_cmd->add_option("--task", bn_task, "task spec JSON")->required();
    bn_cmd->add_option("--seed", bn_seed, "seed (head init and batch order)");
    bn_cmd->add_option("--out", bn_out, "optional trained target output");
    bn_opts.add_to(bn_cmd);

    // experiment
    auto* exp_cmd = app.add_subcommand("experiment", "full leave-one-out sweep");
    std::string exp_config, exp_out;
    exp_cmd->add_option("--config", exp_config, "experiment config JSON")->required();
    exp_cmd->add_option("--out", exp_out, "report output path")->required();

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "test accuracy of a stored net");
    std::string eval_net, eval_task;
    eval_cmd->add_option("--net", eval_net, "network .cnn")->required();
    eval_cmd->add_option("--task", eval_task, "task spec JSON")->required();

    // gen-data
    auto* gen_cmd = app.add_subcommand("gen-data", "write the synthetic stroke dataset as IDX");
    std::string gen_dir;
    int gen_train = 250, gen_test = 100;
    uint64_t gen_seed = 7;
    gen_cmd->add_option("--out-dir", gen_dir, "output directory")->required();
    gen_cmd->add_option("--train-per-class", gen_train, "train examples per class");
    gen_cmd->add_option("--test-per-class", gen_test, "test examples per class");
    gen_cmd->add_option("--seed", gen_seed, "generator seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*train_cmd)
            return cmd_train(train_task, train_arch, train_out, train_seed, train_opts);
        if (*bank_cmd) return cmd_extract_bank(bank_nets, bank_layer, bank_out);
        if (*asm_cmd)
            return cmd_assemble(asm_bank, asm_n, asm_seed, asm_head, asm_classes, asm_out);
        if (*tt_cmd) return cmd_transfer_train(tt_target, tt_task, tt_out, tt_seed, tt_opts);
        if (*bn_cmd)
            return cmd_baseline_net(bn_source, bn_layer, bn_shuffle, bn_perm_seed, bn_task,
                                    bn_seed, bn_out, bn_opts);
        if (*exp_cmd) return cmd_experiment(exp_config, exp_out);
        if (*eval_cmd) return cmd_eval(eval_net, eval_task);
        if (*gen_cmd) return cmd_gen_data(gen_dir, gen_train, gen_test, gen_seed);
    } catch (const std::exception& e) {
        std::string msg = e.what();
        for (char& c : msg)
            if (c == '\n') c = ' ';
        std::cerr << "error: " << msg << "\n";
        return 1;
    }
    return 0;
}
