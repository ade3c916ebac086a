// carft command-line interface. Subcommands cover the full lab workflow:
// gen-data, pretrain, finetune, eval, probe-context, sweep-alpha, sweep-wise,
// soup and an end-to-end demo. Exit codes: 0 ok, 2 configuration error,
// 3 data error, 4 numeric/training error.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "carft/ensemble.hpp"
#include "carft/errors.hpp"
#include "carft/eval.hpp"
#include "carft/rng.hpp"
#include "carft/trainer.hpp"
#include "carft/worldgen.hpp"

namespace fs = std::filesystem;
using namespace carft;

namespace {

struct WorldArgs {
    std::uint64_t world_seed = 1234;
    std::size_t classes = 8;
    std::size_t contexts = 4;
    std::size_t latent_dim = 8;
    std::size_t input_dim = 32;
    double sigma = 0.05;
    double context_scale = WorldConfig{}.context_scale;
    std::vector<std::size_t> ood_contexts = {3};
};

void add_world_flags(CLI::App* cmd, WorldArgs& args) {
    cmd->add_option("--world-seed", args.world_seed, "World generation seed");
    cmd->add_option("--classes", args.classes, "Number of classes K");
    cmd->add_option("--contexts", args.contexts, "Number of contexts M");
    cmd->add_option("--d-lat", args.latent_dim, "Latent dimension");
    cmd->add_option("--d-in", args.input_dim, "Input feature dimension");
    cmd->add_option("--sigma", args.sigma, "Observation noise stddev");
    cmd->add_option("--context-scale", args.context_scale,
                    "Context-to-class signal ratio in the inputs");
    cmd->add_option("--ood-contexts", args.ood_contexts, "Held-out context ids")
        ->delimiter(',');
}

WorldSpec build_world(const WorldArgs& args) {
    WorldConfig cfg;
    cfg.classes = args.classes;
    cfg.contexts = args.contexts;
    cfg.latent_dim = args.latent_dim;
    cfg.input_dim = args.input_dim;
    cfg.sigma = args.sigma;
    cfg.context_scale = args.context_scale;
    cfg.seed = args.world_seed;
    return generate_world(cfg);
}

void add_finetune_flags(CLI::App* cmd, TrainConfig& cfg, std::string& variant) {
    cmd->add_option("--alpha", cfg.alpha, "KL weight in L = CE + alpha*KL");
    cmd->add_option("--epochs", cfg.epochs, "Fine-tuning epochs");
    cmd->add_option("--lr", cfg.lr, "Peak learning rate");
    cmd->add_option("--lr-min", cfg.lr_min, "Cosine schedule floor");
    cmd->add_option("--wd", cfg.weight_decay, "Decoupled weight decay");
    cmd->add_option("--batch", cfg.batch, "Batch size");
    cmd->add_option("--seed", cfg.seed, "Training seed");
    cmd->add_option("--w-ctx-variant", variant,
                    "W_ctx variant: averaged | per-class (ground-truth class lookup)");
    cmd->add_flag("--head-bias", cfg.head_bias, "Attach a bias vector to the head");
    cmd->add_flag("!--no-tau-head", cfg.tau_on_head,
                  "Drop the logit scale from head logits (ablation)");
    cmd->add_flag("--cache-reference", cfg.cache_reference,
                  "Memoize the frozen reference context distributions");
    cmd->add_flag("--reverse-kl", cfg.reverse_kl, "Reverse the KL direction (ablation)");
    cmd->add_option("--probe-epochs", cfg.probe_epochs, "LP-FT stage-1 epochs");
    cmd->add_option("--probe-lr", cfg.probe_lr, "LP-FT stage-1 learning rate");
}

ContextVariant parse_variant(const std::string& name) {
    if (name == "averaged") return ContextVariant::averaged;
    if (name == "per-class") return ContextVariant::per_class;
    throw ConfigError("unknown W_ctx variant '" + name + "' (averaged | per-class)");
}

void merge_report(EvalReport& report, const std::string& path) {
    if (fs::exists(path)) {
        const EvalReport existing = read_report(path);
        EvalReport merged;
        for (const ReportRow& row : existing.rows()) merged.add(row);
        for (const ReportRow& row : report.rows()) merged.add(row);
        report = merged;
    }
    write_report(report, path);
}

std::uint64_t meta_u64(const Checkpoint& ckpt, const std::string& key, std::uint64_t fallback) {
    auto it = ckpt.meta.find(key);
    if (it == ckpt.meta.end()) return fallback;
    try {
        return std::stoull(it->second);
    } catch (const std::exception&) {
        return fallback;
    }
}

std::string meta_str(const Checkpoint& ckpt, const std::string& key,
                     const std::string& fallback) {
    auto it = ckpt.meta.find(key);
    return it == ckpt.meta.end() ? fallback : it->second;
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const WorldArgs& world_args, std::size_t n_train, std::size_t n_id,
                 std::size_t n_ood, std::uint64_t seed, const std::string& out_dir) {
    const WorldSpec world = build_world(world_args);
    SplitPlan plan = make_split_plan(world, world_args.ood_contexts, seed);
    plan.n_train = n_train;
    plan.n_id_test = n_id;
    plan.n_ood_test = n_ood;

    fs::create_directories(out_dir);
    const fs::path dir(out_dir);
    export_dataset(sample_split(world, plan, SplitKind::train), (dir / "train.csv").string());
    export_dataset(sample_split(world, plan, SplitKind::id_test),
                   (dir / "test_id.csv").string());
    export_dataset(sample_split(world, plan, SplitKind::ood_test),
                   (dir / "test_ood.csv").string());
    // Probe split spans every context (context-recognition protocol).
    std::vector<std::size_t> all_contexts(world.n_contexts());
    std::iota(all_contexts.begin(), all_contexts.end(), std::size_t{0});
    export_dataset(sample_examples(world, all_contexts, n_id, derive_seed(seed, 40)),
                   (dir / "probe.csv").string());
    save_templates(default_templates(world), (dir / "templates.txt").string());
    save_classes(world_class_names(world), (dir / "classes.txt").string());
    std::cout << "wrote train/test_id/test_ood/probe CSVs and prompt fixtures to " << out_dir
              << "\n";
    return 0;
}

int cmd_pretrain(const WorldArgs& world_args, PretrainConfig cfg,
                 const std::string& templates_path, const std::string& classes_path,
                 const std::string& ckpt_out) {
    const WorldSpec world = build_world(world_args);
    const auto templates =
        templates_path.empty() ? default_templates(world) : load_templates(templates_path);
    const auto classes =
        classes_path.empty() ? world_class_names(world) : load_classes(classes_path);
    const Checkpoint ckpt = pretrain_contrastive(world, cfg, templates, classes);
    save_checkpoint(ckpt, ckpt_out);
    std::cout << "pretrained checkpoint written to " << ckpt_out
              << " (tau=" << ckpt.logit_scale << ", seed=" << meta_str(ckpt, "seed", "?")
              << ")\n";
    return 0;
}

int cmd_finetune(const std::string& method_name_arg, TrainConfig cfg,
                 const std::string& variant, const std::string& ckpt_in,
                 const std::string& ckpt_out, const std::string& data_path,
                 const std::string& templates_path, const std::string& classes_path,
                 const std::string& log_out) {
    cfg.method = parse_method(method_name_arg);
    cfg.ctx_variant = parse_variant(variant);
    const Checkpoint pretrained = load_checkpoint(ckpt_in);
    const Dataset data = import_dataset(data_path);

    std::vector<PromptTemplate> templates;
    ClassNameSet classes;
    const bool have_prompts = !templates_path.empty() && !classes_path.empty();
    if (have_prompts) {
        templates = load_templates(templates_path);
        classes = load_classes(classes_path);
    } else if (cfg.method != Method::ft) {
        throw ConfigError(std::string(method_name(cfg.method)) +
                          " requires --templates and --classes");
    }

    const FinetuneResult result = finetune(pretrained, data, cfg,
                                           have_prompts ? &templates : nullptr,
                                           have_prompts ? &classes : nullptr);
    save_checkpoint(result.model, ckpt_out);
    if (!log_out.empty()) write_train_log(result.log, log_out);
    const StepRecord& last = result.log.steps.empty() ? StepRecord{} : result.log.steps.back();
    std::cout << method_name(cfg.method) << ": " << result.log.steps.size()
              << " steps, final loss_ce=" << last.loss_ce << " loss_kl=" << last.loss_kl
              << ", checkpoint " << ckpt_out << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_path,
             const std::string& method_tag, const std::string& split, std::uint64_t seed,
             bool seed_given, const std::string& out) {
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    const Dataset data = import_dataset(data_path);
    const double acc = accuracy(ckpt, data);
    const std::string method =
        method_tag.empty() ? meta_str(ckpt, "method", "model") : method_tag;
    const std::uint64_t row_seed = seed_given ? seed : meta_u64(ckpt, "seed", 0);
    std::printf("%s %s accuracy %.6f\n", method.c_str(), split.c_str(), acc);
    if (!out.empty()) {
        EvalReport report;
        report.add(method, split, "accuracy", acc, row_seed);
        merge_report(report, out);
    }
    return 0;
}

int cmd_probe_context(const std::string& ckpt_path, const std::string& data_path,
                      const std::string& templates_path, const std::string& classes_path,
                      const std::string& variant, std::size_t label,
                      const std::string& method_tag, const std::string& split,
                      std::uint64_t seed, bool seed_given, const std::string& out) {
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    const Dataset data = import_dataset(data_path);
    const auto templates = load_templates(templates_path);
    const auto classes = load_classes(classes_path);
    const Vocabulary vocab = vocab_from_checkpoint(ckpt);
    const PromptWeightTensor w = encode_prompts(ckpt.text, vocab, templates, classes);
    const Matrix w_ctx = context_weights(w, parse_variant(variant), label);
    const double acc = context_probe(ckpt.image, w_ctx, ckpt.logit_scale, data);
    const std::string method =
        method_tag.empty() ? meta_str(ckpt, "method", "model") : method_tag;
    const std::uint64_t row_seed = seed_given ? seed : meta_u64(ckpt, "seed", 0);
    std::printf("%s %s context_probe %.6f\n", method.c_str(), split.c_str(), acc);
    if (!out.empty()) {
        EvalReport report;
        report.add(method, split, "context_probe", acc, row_seed);
        merge_report(report, out);
    }
    return 0;
}

int cmd_sweep_alpha(const std::string& ckpt_in, const std::string& data_path,
                    const std::string& id_path, const std::string& ood_path,
                    std::vector<double> alphas, TrainConfig cfg, const std::string& variant,
                    const std::string& templates_path, const std::string& classes_path,
                    const std::string& out) {
    cfg.ctx_variant = parse_variant(variant);
    const Checkpoint pretrained = load_checkpoint(ckpt_in);
    const Dataset train = import_dataset(data_path);
    const Dataset id_test = import_dataset(id_path);
    const Dataset ood_test = import_dataset(ood_path);
    const auto templates = load_templates(templates_path);
    const auto classes = load_classes(classes_path);
    const auto rows =
        alpha_sweep(pretrained, train, id_test, ood_test, alphas, cfg, templates, classes);

    std::ofstream csv(out);
    if (!csv) throw DataError("sweep-alpha: cannot write " + out);
    csv << "alpha,id_acc,ood_acc\n";
    char a[40], b[40], c[40];
    for (const AlphaSweepRow& row : rows) {
        std::snprintf(a, sizeof a, "%.17g", row.alpha);
        std::snprintf(b, sizeof b, "%.17g", row.id_accuracy);
        std::snprintf(c, sizeof c, "%.17g", row.ood_accuracy);
        csv << a << ',' << b << ',' << c << '\n';
        std::printf("alpha=%-6g id=%.4f ood=%.4f\n", row.alpha, row.id_accuracy,
                    row.ood_accuracy);
    }
    return 0;
}

int cmd_sweep_wise(const std::string& zero_shot_path, const std::string& finetuned_path,
                   const std::string& id_path, const std::string& ood_path, std::size_t grid,
                   const std::string& out) {
    const Checkpoint zero_shot = load_checkpoint(zero_shot_path);
    const Checkpoint tuned = load_checkpoint(finetuned_path);
    const Dataset id_test = import_dataset(id_path);
    const Dataset ood_test = import_dataset(ood_path);
    const auto curve = wise_curve(zero_shot, tuned, id_test, ood_test, grid);
    write_curve(curve, out);
    for (const CurvePoint& p : curve)
        std::printf("w=%.2f id=%.4f ood=%.4f\n", p.mix, p.id_accuracy, p.ood_accuracy);
    return 0;
}

int cmd_soup(const std::string& policy, const std::string& val_path, const std::string& out,
             const std::vector<std::string>& ckpt_paths) {
    if (ckpt_paths.empty()) throw ConfigError("soup: no candidate checkpoints given");
    if (policy == "uniform") {
        std::vector<Checkpoint> candidates;
        candidates.reserve(ckpt_paths.size());
        for (const std::string& path : ckpt_paths) candidates.push_back(load_checkpoint(path));
        const Checkpoint soup = uniform_soup(candidates);
        save_checkpoint(soup, out);
        std::cout << "uniform soup of " << candidates.size() << " checkpoints -> " << out
                  << "\n";
        return 0;
    }
    if (policy == "greedy") {
        if (val_path.empty()) throw ConfigError("soup: greedy policy requires --val");
        const Dataset val = import_dataset(val_path);
        std::vector<std::pair<std::string, Checkpoint>> candidates;
        candidates.reserve(ckpt_paths.size());
        for (const std::string& path : ckpt_paths)
            candidates.emplace_back(path, load_checkpoint(path));
        const GreedySoupResult result = greedy_soup(candidates, val);
        save_checkpoint(result.soup, out);
        std::cout << "greedy soup kept " << result.members.size() << "/" << candidates.size()
                  << " members:\n";
        for (const std::string& name : result.members) std::cout << "  " << name << "\n";
        return 0;
    }
    throw ConfigError("soup: unknown policy '" + policy + "' (uniform | greedy)");
}

int cmd_demo(const WorldArgs& world_args, std::uint64_t seed, const std::string& out_dir,
             double alpha) {
    const auto t0 = std::chrono::steady_clock::now();
    auto elapsed = [&t0] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };
    fs::create_directories(out_dir);
    const fs::path dir(out_dir);

    std::cout << "[world] K=" << world_args.classes << " M=" << world_args.contexts
              << " sigma=" << world_args.sigma << " held-out:";
    for (std::size_t c : world_args.ood_contexts) std::cout << " " << c;
    std::cout << "\n";
    const WorldSpec world = build_world(world_args);
    SplitPlan plan = make_split_plan(world, world_args.ood_contexts, derive_seed(seed, 1));
    const Dataset train = sample_split(world, plan, SplitKind::train);
    const Dataset id_test = sample_split(world, plan, SplitKind::id_test);
    const Dataset ood_test = sample_split(world, plan, SplitKind::ood_test);
    // Context probes span every context, mirroring the probe protocol.
    std::vector<std::size_t> all_contexts(world.n_contexts());
    std::iota(all_contexts.begin(), all_contexts.end(), std::size_t{0});
    const Dataset probe_set =
        sample_examples(world, all_contexts, plan.n_id_test, derive_seed(seed, 40));
    export_dataset(train, (dir / "train.csv").string());
    export_dataset(id_test, (dir / "test_id.csv").string());
    export_dataset(ood_test, (dir / "test_ood.csv").string());
    export_dataset(probe_set, (dir / "probe.csv").string());
    const auto templates = default_templates(world);
    const auto classes = world_class_names(world);
    save_templates(templates, (dir / "templates.txt").string());
    save_classes(classes, (dir / "classes.txt").string());

    PretrainConfig pre;
    pre.seed = seed;
    std::cout << "[pretrain] contrastive, " << pre.epochs << " epochs on " << pre.n_samples
              << " pairs...\n";
    const Checkpoint zero_shot = pretrain_contrastive(world, pre, templates, classes);
    save_checkpoint(zero_shot, (dir / "zero_shot.ckpt").string());

    const Vocabulary vocab = vocab_from_checkpoint(zero_shot);
    const PromptWeightTensor w = encode_prompts(zero_shot.text, vocab, templates, classes);
    const Matrix w_ctx = context_weights(w, ContextVariant::averaged);

    EvalReport report;
    const double zs_id = accuracy(zero_shot, id_test);
    const double zs_ood = accuracy(zero_shot, ood_test);
    const double zs_probe =
        context_probe(zero_shot.image, w_ctx, zero_shot.logit_scale, probe_set);
    report.add("zero-shot", "id", "accuracy", zs_id, seed);
    report.add("zero-shot", "ood", "accuracy", zs_ood, seed);
    report.add("zero-shot", "probe", "context_probe", zs_probe, seed);
    std::printf("[zero-shot] id=%.4f ood=%.4f probe=%.4f (tau=%.2f, %.1fs)\n", zs_id, zs_ood,
                zs_probe, zero_shot.logit_scale, elapsed());

    EvalHooks hooks;
    hooks.id_test = &id_test;
    hooks.probe_data = &probe_set;
    hooks.probe_w_ctx = &w_ctx;

    std::map<std::string, Checkpoint> tuned;
    for (Method method : {Method::ft, Method::tp_ft, Method::lp_ft, Method::car_ft}) {
        TrainConfig cfg;
        cfg.method = method;
        cfg.alpha = alpha;
        cfg.seed = seed;
        const bool prompts = method != Method::ft;
        const FinetuneResult result = finetune(zero_shot, train, cfg,
                                               prompts ? &templates : nullptr,
                                               prompts ? &classes : nullptr, hooks);
        const std::string name = method_name(method);
        save_checkpoint(result.model, (dir / (name + ".ckpt")).string());
        write_train_log(result.log, (dir / (name + "_log.csv")).string());
        {
            std::ofstream epochs_csv((dir / (name + "_epochs.csv")).string());
            epochs_csv << "epoch,id_acc,context_probe\n";
            char a[40], b[40];
            for (const EpochSnapshot& snap : result.log.epochs) {
                std::snprintf(a, sizeof a, "%.17g", snap.id_accuracy);
                std::snprintf(b, sizeof b, "%.17g", snap.probe_accuracy);
                epochs_csv << snap.epoch << ',' << a << ',' << b << '\n';
            }
        }
        const double id_acc = accuracy(result.model, id_test);
        const double ood_acc = accuracy(result.model, ood_test);
        const double probe =
            context_probe(result.model.image, w_ctx, result.model.logit_scale, probe_set);
        report.add(name, "id", "accuracy", id_acc, seed);
        report.add(name, "ood", "accuracy", ood_acc, seed);
        report.add(name, "probe", "context_probe", probe, seed);
        std::printf("[%s] id=%.4f ood=%.4f probe=%.4f (%.1fs)\n", name.c_str(), id_acc, ood_acc,
                    probe, elapsed());
        tuned.emplace(name, result.model);
    }

    for (const char* name : {"tp-ft", "car-ft"}) {
        const auto curve =
            wise_curve(zero_shot, tuned.at(name), id_test, ood_test, 11);
        write_curve(curve, (dir / (std::string("wise_") + name + ".csv")).string());
    }
    std::printf("[wise] interpolation curves written (%.1fs)\n", elapsed());

    std::vector<std::pair<std::string, Checkpoint>> candidates;
    for (const auto& [name, ckpt] : tuned) candidates.emplace_back(name, ckpt);
    std::vector<Checkpoint> plain;
    for (const auto& [name, ckpt] : tuned) plain.push_back(ckpt);
    const Checkpoint uniform = uniform_soup(plain);
    save_checkpoint(uniform, (dir / "uniform_soup.ckpt").string());
    report.add("uniform-soup", "id", "accuracy", accuracy(uniform, id_test), seed);
    report.add("uniform-soup", "ood", "accuracy", accuracy(uniform, ood_test), seed);
    const GreedySoupResult greedy = greedy_soup(candidates, id_test);
    save_checkpoint(greedy.soup, (dir / "greedy_soup.ckpt").string());
    report.add("greedy-soup", "id", "accuracy", accuracy(greedy.soup, id_test), seed);
    report.add("greedy-soup", "ood", "accuracy", accuracy(greedy.soup, ood_test), seed);
    std::cout << "[soup] greedy kept:";
    for (const std::string& name : greedy.members) std::cout << " " << name;
    std::cout << "\n";

    write_report(report, (dir / "report.csv").string());
    std::printf("[done] report at %s/report.csv (%.1fs total)\n", out_dir.c_str(), elapsed());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"carft: a desk-scale context-aware robust fine-tuning laboratory"};
    app.require_subcommand(1);

    // gen-data ---------------------------------------------------------------
    auto* gen = app.add_subcommand("gen-data", "Sample a synthetic world into CSV datasets");
    WorldArgs gen_world;
    add_world_flags(gen, gen_world);
    std::size_t gen_train = 4096, gen_id = 1024, gen_ood = 1024;
    std::uint64_t gen_seed = 0;
    std::string gen_out = "data";
    gen->add_option("--n-train", gen_train, "Training examples");
    gen->add_option("--n-id", gen_id, "ID test examples");
    gen->add_option("--n-ood", gen_ood, "OOD test examples");
    gen->add_option("--seed", gen_seed, "Sampling seed");
    gen->add_option("--out-dir", gen_out, "Output directory");

    // pretrain ---------------------------------------------------------------
    auto* pre = app.add_subcommand("pretrain", "Contrastively pre-train the dual encoder");
    WorldArgs pre_world;
    add_world_flags(pre, pre_world);
    PretrainConfig pre_cfg;
    std::string pre_templates, pre_classes, pre_out = "zero_shot.ckpt";
    pre->add_option("--epochs", pre_cfg.epochs, "Pre-training epochs");
    pre->add_option("--lr", pre_cfg.lr, "Peak learning rate");
    pre->add_option("--batch", pre_cfg.batch, "Contrastive batch size");
    pre->add_option("--samples", pre_cfg.n_samples, "Image-caption pairs to sample");
    pre->add_option("--d-hidden", pre_cfg.hidden_dim, "Image encoder hidden width");
    pre->add_option("--embed-dim", pre_cfg.embed_dim, "Shared embedding dimension");
    pre->add_option("--init-tau", pre_cfg.init_tau, "Initial logit scale");
    pre->add_option("--seed", pre_cfg.seed, "Training seed");
    pre->add_option("--gate-templates", pre_templates,
                    "Template file for the quality gate (default: world templates)");
    pre->add_option("--gate-classes", pre_classes,
                    "Class list for the quality gate (default: world class names)");
    pre->add_option("--ckpt-out", pre_out, "Output checkpoint path");

    // finetune ---------------------------------------------------------------
    auto* fin = app.add_subcommand("finetune", "Fine-tune with ft | tp-ft | lp-ft | car-ft");
    TrainConfig fin_cfg;
    std::string fin_method = "car-ft", fin_variant = "averaged";
    std::string fin_in, fin_out = "finetuned.ckpt", fin_data, fin_templates, fin_classes,
                fin_log;
    fin->add_option("--method", fin_method, "ft | tp-ft | lp-ft | car-ft")->required();
    fin->add_option("--ckpt-in", fin_in, "Pre-trained checkpoint")->required();
    fin->add_option("--ckpt-out", fin_out, "Output checkpoint path");
    fin->add_option("--data", fin_data, "Training dataset CSV")->required();
    fin->add_option("--templates", fin_templates, "Template file");
    fin->add_option("--classes", fin_classes, "Class list file");
    fin->add_option("--log-out", fin_log, "Per-step training log CSV");
    add_finetune_flags(fin, fin_cfg, fin_variant);

    // eval -------------------------------------------------------------------
    auto* ev = app.add_subcommand("eval", "Top-1 accuracy of a checkpoint on a dataset");
    std::string ev_ckpt, ev_data, ev_method, ev_split = "test", ev_out;
    std::uint64_t ev_seed = 0;
    ev->add_option("--ckpt", ev_ckpt, "Checkpoint path")->required();
    ev->add_option("--data", ev_data, "Dataset CSV")->required();
    ev->add_option("--method", ev_method, "Method tag for the report row");
    ev->add_option("--split", ev_split, "Split name for the report row");
    auto* ev_seed_opt = ev->add_option("--seed", ev_seed, "Seed tag for the report row");
    ev->add_option("--out", ev_out, "Report CSV to create or extend");

    // probe-context ----------------------------------------------------------
    auto* probe = app.add_subcommand("probe-context",
                                     "Zero-shot context recognition accuracy via W_ctx");
    std::string pr_ckpt, pr_data, pr_templates, pr_classes, pr_variant = "averaged";
    std::string pr_method, pr_split = "test", pr_out;
    std::size_t pr_label = 0;
    std::uint64_t pr_seed = 0;
    probe->add_option("--ckpt", pr_ckpt, "Checkpoint path")->required();
    probe->add_option("--data", pr_data, "Dataset CSV with context tags")->required();
    probe->add_option("--templates", pr_templates, "Template file")->required();
    probe->add_option("--classes", pr_classes, "Class list file")->required();
    probe->add_option("--variant", pr_variant, "W_ctx variant: averaged | per-class");
    probe->add_option("--label", pr_label, "Class label for per-class W_ctx");
    probe->add_option("--method", pr_method, "Method tag for the report row");
    probe->add_option("--split", pr_split, "Split name for the report row");
    auto* pr_seed_opt = probe->add_option("--seed", pr_seed, "Seed tag for the report row");
    probe->add_option("--out", pr_out, "Report CSV to create or extend");

    // sweep-alpha ------------------------------------------------------------
    auto* sa = app.add_subcommand("sweep-alpha", "CAR-FT accuracy across alpha values");
    TrainConfig sa_cfg;
    std::string sa_variant = "averaged";
    std::string sa_in, sa_data, sa_id, sa_ood, sa_templates, sa_classes, sa_out = "alpha.csv";
    std::vector<double> sa_alphas = {0.0, 0.25, 1.0, 4.0, 16.0};
    sa->add_option("--ckpt-in", sa_in, "Pre-trained checkpoint")->required();
    sa->add_option("--data", sa_data, "Training dataset CSV")->required();
    sa->add_option("--data-id", sa_id, "ID test CSV")->required();
    sa->add_option("--data-ood", sa_ood, "OOD test CSV")->required();
    sa->add_option("--templates", sa_templates, "Template file")->required();
    sa->add_option("--classes", sa_classes, "Class list file")->required();
    sa->add_option("--alphas", sa_alphas, "Alpha values, ascending")->delimiter(',');
    sa->add_option("--out", sa_out, "Output CSV");
    add_finetune_flags(sa, sa_cfg, sa_variant);

    // sweep-wise -------------------------------------------------------------
    auto* sw = app.add_subcommand("sweep-wise", "WiSE-FT interpolation curve");
    std::string sw_zero, sw_tuned, sw_id, sw_ood, sw_out = "curve.csv";
    std::size_t sw_grid = 11;
    sw->add_option("--zero-shot", sw_zero, "Zero-shot checkpoint")->required();
    sw->add_option("--finetuned", sw_tuned, "Fine-tuned checkpoint")->required();
    sw->add_option("--data-id", sw_id, "ID test CSV")->required();
    sw->add_option("--data-ood", sw_ood, "OOD test CSV")->required();
    sw->add_option("--grid", sw_grid, "Number of interpolation weights");
    sw->add_option("--out", sw_out, "Output CSV");

    // soup -------------------------------------------------------------------
    auto* soup = app.add_subcommand("soup", "Weight-space ensemble of checkpoints");
    std::string soup_policy = "uniform", soup_val, soup_out = "soup.ckpt";
    std::vector<std::string> soup_ckpts;
    soup->add_option("--policy", soup_policy, "uniform | greedy");
    soup->add_option("--val", soup_val, "Validation CSV (greedy policy)");
    soup->add_option("--out", soup_out, "Output checkpoint path");
    soup->add_option("ckpts", soup_ckpts, "Candidate checkpoints")->expected(-1);

    // demo -------------------------------------------------------------------
    auto* demo = app.add_subcommand("demo", "End-to-end pipeline on the default world");
    WorldArgs demo_world;
    add_world_flags(demo, demo_world);
    std::uint64_t demo_seed = 0;
    std::string demo_out = "demo_out";
    double demo_alpha = 1.0;
    demo->add_option("--seed", demo_seed, "Pipeline seed");
    demo->add_option("--out-dir", demo_out, "Output directory");
    demo->add_option("--alpha", demo_alpha, "CAR-FT alpha");

    try {
        app.parse(argc, argv);
        if (gen->parsed())
            return cmd_gen_data(gen_world, gen_train, gen_id, gen_ood, gen_seed, gen_out);
        if (pre->parsed())
            return cmd_pretrain(pre_world, pre_cfg, pre_templates, pre_classes, pre_out);
        if (fin->parsed())
            return cmd_finetune(fin_method, fin_cfg, fin_variant, fin_in, fin_out, fin_data,
                                fin_templates, fin_classes, fin_log);
        if (ev->parsed())
            return cmd_eval(ev_ckpt, ev_data, ev_method, ev_split, ev_seed,
                            ev_seed_opt->count() > 0, ev_out);
        if (probe->parsed())
            return cmd_probe_context(pr_ckpt, pr_data, pr_templates, pr_classes, pr_variant,
                                     pr_label, pr_method, pr_split, pr_seed,
                                     pr_seed_opt->count() > 0, pr_out);
        if (sa->parsed())
            return cmd_sweep_alpha(sa_in, sa_data, sa_id, sa_ood, sa_alphas, sa_cfg, sa_variant,
                                   sa_templates, sa_classes, sa_out);
        if (sw->parsed())
            return cmd_sweep_wise(sw_zero, sw_tuned, sw_id, sw_ood, sw_grid, sw_out);
        if (soup->parsed()) return cmd_soup(soup_policy, soup_val, soup_out, soup_ckpts);
        if (demo->parsed()) return cmd_demo(demo_world, demo_seed, demo_out, demo_alpha);
        return 2;
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    }
}
