// pdro: train, attack, defend, DRO-train and audit small image classifiers.
//
// Exit status: 0 success, 1 runtime or numeric failure, 2 usage error.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "pdro/attack.hpp"
#include "pdro/classifier.hpp"
#include "pdro/dro.hpp"
#include "pdro/errors.hpp"
#include "pdro/format.hpp"
#include "pdro/image.hpp"
#include "pdro/parallel.hpp"
#include "pdro/stats.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace pdro;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Converts configuration errors raised while resolving flags into usage errors.
template <class F>
void resolve(F&& f) {
    try {
        f();
    } catch (const ParameterError& e) {
        throw UsageError(e.what());
    } catch (const CapabilityError& e) {
        throw UsageError(e.what());
    }
}

struct DataFlags {
    std::string images, labels;
    std::size_t limit = 0;
    int classes = 10;

    void add(CLI::App* cmd, bool required = true) {
        auto* i = cmd->add_option("--images", images, "IDX image file")->check(CLI::ExistingFile);
        auto* l = cmd->add_option("--labels", labels, "IDX label file")->check(CLI::ExistingFile);
        if (required) {
            i->required();
            l->required();
        }
        cmd->add_option("--limit", limit, "use only the first N examples (0 = all)");
        cmd->add_option("--classes", classes, "class count")->capture_default_str();
    }

    Dataset load() const {
        Dataset d = load_idx(images, labels, classes);
        return limit > 0 ? d.head(limit) : d;
    }

    json record() const { return {{"images", images}, {"labels", labels}, {"limit", limit}, {"classes", classes}}; }
};

struct AttackFlags {
    std::string method = "perceptual";
    double epsilon = 0.1, lambda = 1.0, confidence = 0.0;
    int iters = 100;
    std::string cost; // empty: ssim-global for ssim-onestep, else ssim-windowed
    double ridge = 1e-6;

    void add(CLI::App* cmd, const std::string& prefix = "") {
        cmd->add_option("--" + prefix + "method", method, "ssim-onestep | pgd-onestep | pgd | perceptual")
            ->check(CLI::IsMember({"ssim-onestep", "pgd-onestep", "pgd", "perceptual"}))
            ->capture_default_str();
        cmd->add_option("--" + prefix + "epsilon", epsilon, "step size")->capture_default_str();
        cmd->add_option("--" + prefix + "lambda", lambda, "cost penalty")->capture_default_str();
        cmd->add_option("--" + prefix + "iters", iters, "iteration budget N")->capture_default_str();
        cmd->add_option("--" + prefix + "cost", cost, "ssim-global | ssim-windowed | l2")
            ->check(CLI::IsMember({"ssim-global", "ssim-windowed", "l2"}));
        cmd->add_option("--" + prefix + "ridge", ridge, "Hessian ridge scale")->capture_default_str();
    }

    AttackConfig config(double a) const {
        AttackConfig c;
        resolve([&] {
            c.method = parse_attack_method(method);
            c.epsilon = epsilon;
            c.lambda = lambda;
            c.confidence = a;
            c.max_iterations = iters;
            c.cost = make_cost(resolved_cost());
            c.hessian_ridge = ridge;
            c.validate();
        });
        return c;
    }

    std::string resolved_cost() const {
        if (!cost.empty()) return cost;
        return method == "ssim-onestep" ? "ssim-global" : "ssim-windowed";
    }

    json record(double a) const {
        return {{"method", method}, {"epsilon", epsilon}, {"lambda", lambda}, {"confidence", a},
                {"iters", iters},   {"cost", resolved_cost()}, {"ridge", ridge}};
    }
};

void write_config(const fs::path& path, const std::string& command, json body) {
    json j;
    j["command"] = command;
    for (auto& [k, v] : body.items()) j[k] = v;
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

fs::path sibling(const fs::path& out, const std::string& suffix) {
    fs::path p = out;
    p.replace_extension();
    return p.string() + suffix;
}

void ensure_parent(const fs::path& p) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

std::ofstream open_out(const fs::path& p) {
    ensure_parent(p);
    std::ofstream out(p);
    if (!out) throw IoError("cannot write " + p.string());
    return out;
}

std::vector<fs::path> checkpoints_in(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".ckpt") out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<Model> load_models(const std::vector<fs::path>& paths) {
    std::vector<Model> models;
    for (const auto& p : paths) models.push_back(load_checkpoint(p));
    return models;
}

std::string indexed_name(std::size_t i, std::size_t count) {
    const std::size_t width = std::max<std::size_t>(2, std::to_string(count > 0 ? count - 1 : 0).size());
    std::string digits = std::to_string(i);
    return "model_" + std::string(width - std::min(width, digits.size()), '0') + digits + ".ckpt";
}

std::string pad(std::size_t i, std::size_t width) {
    std::string s = std::to_string(i);
    return std::string(width > s.size() ? width - s.size() : 0, '0') + s;
}

// -- train ------------------------------------------------------------------------------

struct TrainCmd {
    DataFlags data;
    std::string test_images, test_labels;
    std::string arch = "convnet";
    TrainConfig cfg;
    std::string out;

    void add(CLI::App& app) {
        auto* cmd = app.add_subcommand("train", "train a baseline classifier");
        data.add(cmd);
        cmd->add_option("--test-images", test_images, "IDX images for the test metric")->check(CLI::ExistingFile);
        cmd->add_option("--test-labels", test_labels, "IDX labels for the test metric")->check(CLI::ExistingFile);
        cmd->add_option("--arch", arch, "mlp | convnet")->check(CLI::IsMember({"mlp", "convnet"}))->capture_default_str();
        cmd->add_option("--epochs", cfg.epochs)->capture_default_str();
        cmd->add_option("--lr", cfg.learning_rate)->capture_default_str();
        cmd->add_option("--batch-size", cfg.batch_size)->capture_default_str();
        cmd->add_option("--seed", cfg.seed)->capture_default_str();
        cmd->add_option("--out", out, "checkpoint path")->required();
        cmd->callback([this] { run(); });
    }

    void run() {
        resolve([&] { cfg.validate(); });
        if (test_images.empty() != test_labels.empty())
            throw UsageError("--test-images and --test-labels go together");
        const Dataset train = data.load();
        const Model m = train_baseline(parse_architecture(arch), train, cfg);
        ensure_parent(out);
        save_checkpoint(m, out);

        std::ostringstream row;
        row << "arch,epochs,lr,batch_size,seed,train_loss,train_accuracy,test_accuracy\n"
            << arch << ',' << cfg.epochs << ',' << format_double(cfg.learning_rate) << ',' << cfg.batch_size << ','
            << cfg.seed << ',' << format_double(mean_loss(m, train)) << ',' << format_double(accuracy(m, train))
            << ',';
        if (!test_images.empty()) row << format_double(accuracy(m, load_idx(test_images, test_labels, data.classes)));
        row << '\n';
        std::cout << row.str();
        open_out(sibling(out, ".metrics.csv")) << row.str();
        write_config(sibling(out, ".config.json"), "train",
                     {{"data", data.record()},
                      {"test_images", test_images},
                      {"test_labels", test_labels},
                      {"arch", arch},
                      {"epochs", cfg.epochs},
                      {"lr", cfg.learning_rate},
                      {"batch_size", cfg.batch_size},
                      {"seed", cfg.seed},
                      {"out", out}});
    }
};

// -- attack -----------------------------------------------------------------------------

struct AttackCmd {
    DataFlags data;
    AttackFlags attack;
    std::string model, out, export_dir;
    double confidence = 0;
    std::size_t* workers;

    explicit AttackCmd(std::size_t* w) : workers(w) {}

    void add(CLI::App& app) {
        auto* cmd = app.add_subcommand("attack", "attack every correctly classified example");
        data.add(cmd);
        attack.add(cmd);
        cmd->add_option("--confidence", confidence, "early-stop margin a")->capture_default_str();
        cmd->add_option("--model", model, "checkpoint")->required()->check(CLI::ExistingFile);
        cmd->add_option("--out", out, "report CSV")->required();
        cmd->add_option("--export-images", export_dir, "write original/adversarial PGM pairs here");
        cmd->callback([this] { run(); });
    }

    void run() {
        const AttackConfig cfg = attack.config(confidence);
        const Model m = load_checkpoint(model);
        const Dataset d = data.load();
        const auto s = success_rate(m, d, cfg, *workers);

        auto csv = open_out(out);
        csv << "image_id,method,a,epsilon,lambda,success,iterations,l1,l2,linf,one_minus_ssim\n";
        for (const auto& a : s.attacks) {
            const auto& r = a.result;
            const auto& dist = r.distances;
            csv << a.index << ',' << attack.method << ',' << format_double(confidence) << ','
                << format_double(cfg.epsilon) << ',' << format_double(cfg.lambda) << ',' << (r.success ? 1 : 0)
                << ',' << r.iterations_used << ',' << format_double(dist.l1) << ',' << format_double(dist.l2) << ','
                << format_double(dist.linf) << ',' << format_double(dist.one_minus_ssim) << '\n';
            if (!export_dir.empty()) {
                fs::create_directories(export_dir);
                write_pgm(d.examples[a.index].image, fs::path(export_dir) / (pad(a.index, 5) + "_original.pgm"));
                write_pgm(r.adversarial, fs::path(export_dir) / (pad(a.index, 5) + "_adversarial.pgm"));
            }
        }
        std::cout << "method,a,eligible,attacked,success_rate,mean_one_minus_ssim\n"
                  << attack.method << ',' << format_double(confidence) << ',' << s.eligible << ',' << s.attacked
                  << ',' << format_double(s.rate) << ',' << format_double(s.mean_distances.one_minus_ssim) << '\n';
        json rec = {{"data", data.record()}, {"model", model}, {"attack", attack.record(confidence)},
                    {"export_images", export_dir}, {"out", out}};
        write_config(sibling(out, ".config.json"), "attack", rec);
    }
};

// -- defense-eval -----------------------------------------------------------------------

struct DefenseCmd {
    DataFlags data;
    AttackFlags attack;
    std::string model, out, defense;
    std::vector<std::string> sweep_text;
    std::vector<int> sweep;
    std::vector<double> confidences{0.0};
    std::size_t* workers;

    explicit DefenseCmd(std::size_t* w) : workers(w) {}

    void add(CLI::App& app) {
        auto* cmd = app.add_subcommand("defense-eval", "attack success under input-transformation defenses");
        data.add(cmd);
        attack.add(cmd);
        cmd->add_option("--model", model, "checkpoint")->required()->check(CLI::ExistingFile);
        cmd->add_option("--defense", defense, "jpeg | bitdepth")->required()->check(CLI::IsMember({"jpeg", "bitdepth"}));
        cmd->add_option("--sweep", sweep_text, "comma-separated qualities or bit depths")->required()->delimiter(',');
        cmd->add_option("--confidence", confidences, "comma-separated margins a")->delimiter(',')->capture_default_str();
        cmd->add_option("--out", out, "CSV path")->required();
        cmd->callback([this] { run(); });
    }

    void run() {
        sweep.clear();
        for (const auto& v : sweep_text) {
            if (v.empty()) continue;
            try {
                std::size_t used = 0;
                sweep.push_back(std::stoi(v, &used));
                if (used != v.size()) throw std::invalid_argument(v);
            } catch (const std::logic_error&) {
                throw UsageError("--sweep value '" + v + "' is not an integer");
            }
        }
        if (sweep.empty()) throw UsageError("--sweep needs at least one value");
        if (confidences.empty()) throw UsageError("--confidence needs at least one value");
        const auto kind = parse_defense_kind(defense);
        for (int v : sweep) {
            const bool ok = kind == Defense::Kind::jpeg ? (v >= 1 && v <= 100) : (v >= 1 && v <= 8);
            if (!ok) throw UsageError("sweep value " + std::to_string(v) + " is out of range for " + defense);
        }
        std::vector<AttackConfig> configs;
        for (double a : confidences) configs.push_back(attack.config(a));
        const Model m = load_checkpoint(model);
        const Dataset d = data.load();

        auto csv = open_out(out);
        csv << "method,a,defense,defense_param,success_rate\n";
        for (std::size_t c = 0; c < configs.size(); ++c)
            for (const auto& row : defense_sweep(m, d, configs[c], kind, sweep, *workers))
                csv << attack.method << ',' << format_double(confidences[c]) << ',' << defense << ','
                    << row.parameter << ',' << format_double(row.success_rate) << '\n';
        json attacks = json::array();
        for (double a : confidences) attacks.push_back(attack.record(a));
        write_config(sibling(out, ".config.json"), "defense-eval",
                     {{"data", data.record()}, {"model", model}, {"defense", defense}, {"sweep", sweep},
                      {"attacks", attacks}, {"out", out}});
    }
};

// -- dro --------------------------------------------------------------------------------

struct DroFlags {
    double alpha = DroConfig{}.learning_rate;
    std::string weight_mode = "normalized";
    double loss_limit = DroConfig{}.divergence_loss_limit;
    double radius = 0;

    void add(CLI::App* cmd) {
        cmd->add_option("--alpha", alpha, "learning rate")->capture_default_str();
        cmd->add_option("--weight-mode", weight_mode, "literal | normalized")
            ->check(CLI::IsMember({"literal", "normalized"}))
            ->capture_default_str();
        cmd->add_option("--loss-limit", loss_limit, "divergence guard on the sampled loss")->capture_default_str();
        cmd->add_option("--radius", radius, "uncertainty radius (recorded only)")->capture_default_str();
    }

    void apply(DroConfig& c) const {
        c.learning_rate = alpha;
        c.weight_mode = parse_weight_mode(weight_mode);
        c.divergence_loss_limit = loss_limit;
        c.radius = radius;
    }

    json record() const {
        return {{"alpha", alpha}, {"weight_mode", weight_mode}, {"loss_limit", loss_limit}, {"radius", radius}};
    }
};

struct DroGenCmd {
    DataFlags data;
    AttackFlags attack;
    DroFlags dro;
    double confidence = 0;
    int t1 = 2;
    std::uint64_t seed = 0;
    std::string model, out;

    void add(CLI::App* parent) {
        auto* cmd = parent->add_subcommand("gen", "generate a robust dataset");
        data.add(cmd);
        attack.add(cmd, "attack-");
        cmd->add_option("--attack-confidence", confidence)->capture_default_str();
        dro.add(cmd);
        cmd->add_option("--t1", t1, "outer steps")->capture_default_str();
        cmd->add_option("--seed", seed)->capture_default_str();
        cmd->add_option("--model", model, "baseline checkpoint")->required()->check(CLI::ExistingFile);
        cmd->add_option("--out", out, "output directory")->required();
        cmd->callback([this] { run(); });
    }

    void run() {
        DroConfig cfg;
        cfg.attack = attack.config(confidence);
        resolve([&] {
            dro.apply(cfg);
            cfg.outer_steps = t1;
            cfg.validate();
        });
        const Model m0 = load_checkpoint(model);
        const Dataset d = data.load();
        const auto g = generate_robust_dataset(m0, d, cfg, seed);
        const fs::path dir = out;
        save_robust_dataset(g.dataset, dir);
        save_checkpoint(g.model, dir / "generation_model.ckpt");
        auto diag = open_out(dir / "diagnostics.csv");
        diag << "entries,attack_errors,not_flipped\n"
             << g.dataset.size() << ',' << g.diagnostics.attack_errors << ',' << g.diagnostics.not_flipped << '\n';
        std::cout << "entries,origin_size,outer_steps,attack_errors,not_flipped\n"
                  << g.dataset.size() << ',' << g.dataset.origin_size << ',' << g.dataset.outer_steps_used << ','
                  << g.diagnostics.attack_errors << ',' << g.diagnostics.not_flipped << '\n';
        write_config(dir / "config.json", "dro gen",
                     {{"data", data.record()}, {"model", model}, {"attack", attack.record(confidence)},
                      {"dro", dro.record()}, {"t1", t1}, {"seed", seed}, {"out", out}});
    }
};

struct DroTrainCmd {
    DroFlags dro;
    int t2 = 3;
    std::uint64_t seed = 0;
    int classes = 10;
    std::string model, robust, out;

    void add(CLI::App* parent) {
        auto* cmd = parent->add_subcommand("train", "weighted DRO training on a robust dataset");
        dro.add(cmd);
        cmd->add_option("--t2", t2, "epochs over the robust dataset")->capture_default_str();
        cmd->add_option("--seed", seed)->capture_default_str();
        cmd->add_option("--classes", classes)->capture_default_str();
        cmd->add_option("--model", model, "starting checkpoint")->required()->check(CLI::ExistingFile);
        cmd->add_option("--robust", robust, "robust dataset directory")->required()->check(CLI::ExistingDirectory);
        cmd->add_option("--out", out, "checkpoint path")->required();
        cmd->callback([this] { run(); });
    }

    void run() {
        DroConfig cfg;
        resolve([&] {
            dro.apply(cfg);
            cfg.epochs = t2;
            cfg.validate();
        });
        const Model m0 = load_checkpoint(model);
        const RobustDataset rd = load_robust_dataset(robust, classes);
        const Model m = dro_train(m0, rd, cfg, seed);
        ensure_parent(out);
        save_checkpoint(m, out);
        std::cout << "entries,robust_accuracy\n" << rd.size() << ',' << format_double(accuracy(m, rd.as_dataset())) << '\n';
        write_config(sibling(out, ".config.json"), "dro train",
                     {{"model", model}, {"robust", robust}, {"classes", classes}, {"dro", dro.record()},
                      {"t2", t2}, {"seed", seed}, {"out", out}});
    }
};

struct DroSampleCmd {
    DroFlags dro;
    int t2 = 3, runs = 50, classes = 10;
    std::uint64_t seed = 0;
    std::string model, robust, out;
    std::size_t* workers;

    explicit DroSampleCmd(std::size_t* w) : workers(w) {}

    void add(CLI::App* parent) {
        auto* cmd = parent->add_subcommand("sample", "train a population of DRO models");
        dro.add(cmd);
        cmd->add_option("--t2", t2)->capture_default_str();
        cmd->add_option("--runs", runs, "population size R")->capture_default_str();
        cmd->add_option("--seed", seed, "base seed")->capture_default_str();
        cmd->add_option("--classes", classes)->capture_default_str();
        cmd->add_option("--model", model, "starting checkpoint")->required()->check(CLI::ExistingFile);
        cmd->add_option("--robust", robust, "robust dataset directory")->required()->check(CLI::ExistingDirectory);
        cmd->add_option("--out", out, "output directory")->required();
        cmd->callback([this] { run(); });
    }

    void run() {
        DroConfig cfg;
        resolve([&] {
            dro.apply(cfg);
            cfg.epochs = t2;
            cfg.run_count = runs;
            cfg.validate();
            if (runs < 2) throw ParameterError("a population needs --runs >= 2");
        });
        const Model m0 = load_checkpoint(model);
        const RobustDataset rd = load_robust_dataset(robust, classes);
        PopulationReport report;
        const auto models = sample_model_population(m0, rd, cfg, seed, *workers, &report);
        const fs::path dir = out;
        fs::create_directories(dir);
        auto csv = open_out(dir / "population.csv");
        csv << "run,file,seed,retried\n";
        for (std::size_t r = 0; r < models.size(); ++r) {
            const std::string name = indexed_name(r, models.size());
            save_checkpoint(models[r], dir / name);
            csv << r << ',' << name << ',' << report.seeds[r] << ',' << report.retried[r] << '\n';
        }
        std::cout << "runs,retried\n"
                  << models.size() << ',' << std::count(report.retried.begin(), report.retried.end(), 1) << '\n';
        write_config(dir / "config.json", "dro sample",
                     {{"model", model}, {"robust", robust}, {"classes", classes}, {"dro", dro.record()},
                      {"t2", t2}, {"runs", runs}, {"seed", seed}, {"out", out}});
    }
};

// -- fairness ---------------------------------------------------------------------------

GlsOptions gls_options(const std::string& weighting) {
    GlsOptions o;
    o.weighting = weighting == "n" ? GlsWeighting::inverse_n : GlsWeighting::inverse_sqrt_n;
    return o;
}

struct SynthCmd {
    DataFlags data;
    GroupedDatasetSpec spec;
    std::string out;

    void add(CLI::App* parent) {
        auto* cmd = parent->add_subcommand("synth", "build a planted-bias grouped dataset");
        data.add(cmd);
        cmd->add_option("--groups", spec.groups)->capture_default_str();
        cmd->add_option("--slope", spec.slope, "log-income grid spacing")->capture_default_str();
        cmd->add_option("--noise", spec.noise_scale, "pixel noise sd at the poorest group")->capture_default_str();
        cmd->add_option("--size-exponent", spec.size_exponent, "power-law tail index of group sizes")
            ->capture_default_str();
        cmd->add_option("--seed", spec.seed)->capture_default_str();
        cmd->add_option("--out", out, "output directory")->required();
        cmd->callback([this] { run(); });
    }

    void run() {
        const Dataset base = data.load();
        GroupedDataset gd;
        resolve([&] { gd = make_grouped_dataset(base, spec); });
        const fs::path dir = out;
        fs::create_directories(dir);
        save_idx(gd.data, dir / "images.idx", dir / "labels.idx", IdxPixelType::f64);
        write_group_membership_csv(gd, dir / "groups.csv");
        std::cout << "examples,groups\n" << gd.data.size() << ',' << gd.meta.size() << '\n';
        write_config(dir / "config.json", "fairness synth",
                     {{"data", data.record()}, {"groups", spec.groups}, {"slope", spec.slope},
                      {"noise", spec.noise_scale}, {"size_exponent", spec.size_exponent}, {"seed", spec.seed},
                      {"out", out}});
    }
};

struct GroupedInput {
    DataFlags data;
    std::string groups;
    std::string weighting = "sqrt-n";

    void add(CLI::App* cmd) {
        data.add(cmd);
        cmd->add_option("--groups", groups, "membership CSV from `fairness synth`")->required()->check(CLI::ExistingFile);
        cmd->add_option("--weighting", weighting, "sqrt-n (Sigma_ii = 1/sqrt(n)) | n")
            ->check(CLI::IsMember({"sqrt-n", "n"}))
            ->capture_default_str();
    }

    std::pair<Dataset, GroupMeta> load() const {
        if (data.limit > 0) throw UsageError("--limit would break the group membership file");
        Dataset d = data.load();
        const GroupMeta meta = read_group_membership_csv(groups, d);
        return {std::move(d), meta};
    }

    json record() const { return {{"data", data.record()}, {"groups", groups}, {"weighting", weighting}}; }
};

struct AuditCmd {
    GroupedInput input;
    std::string models_dir, model, out, records_dir;
    std::size_t* workers;

    explicit AuditCmd(std::size_t* w) : workers(w) {}

    void add(CLI::App* parent) {
        auto* cmd = parent->add_subcommand("audit", "GLS slope test per model");
        input.add(cmd);
        auto* dir = cmd->add_option("--models", models_dir, "directory of checkpoints")->check(CLI::ExistingDirectory);
        auto* one = cmd->add_option("--model", model, "single checkpoint")->check(CLI::ExistingFile);
        dir->excludes(one);
        cmd->add_option("--records-dir", records_dir, "also write per-model group records here");
        cmd->add_option("--out", out, "audit CSV")->required();
        cmd->callback([this] { run(); });
    }

    void run() {
        if (models_dir.empty() == model.empty()) throw UsageError("give exactly one of --models or --model");
        const auto paths = model.empty() ? checkpoints_in(models_dir) : std::vector<fs::path>{model};
        if (paths.empty()) throw UsageError("no .ckpt files in " + models_dir);
        const auto [d, meta] = input.load();
        const auto models = load_models(paths);
        const auto audit = audit_population(models, d, meta, gls_options(input.weighting), *workers);
        ensure_parent(out);
        write_audit_csv(audit.fits, out);
        write_beta_summary_csv(audit.summary, sibling(out, ".beta_summary.csv"));
        if (!records_dir.empty()) {
            fs::create_directories(records_dir);
            for (std::size_t i = 0; i < models.size(); ++i)
                write_group_records_csv(group_accuracy(models[i], d, meta).records,
                                        fs::path(records_dir) / ("groups_" + pad(i, 2) + ".csv"));
        }
        std::cout << "models,mean_beta,median_beta,rejections_at_0.05\n"
                  << models.size() << ',' << format_double(audit.summary.mean) << ','
                  << format_double(audit.summary.median) << ','
                  << std::count_if(audit.fits.begin(), audit.fits.end(), [](const GlsResult& f) { return f.p_value < 0.05; })
                  << '\n';
        json files = json::array();
        for (const auto& p : paths) files.push_back(p.string());
        write_config(sibling(out, ".config.json"), "fairness audit",
                     {{"input", input.record()}, {"models", files}, {"records_dir", records_dir}, {"out", out}});
    }
};

// Slopes from an audit CSV, or from auditing a directory of checkpoints.
std::vector<double> betas_from(const fs::path& source, const GroupedInput& input, std::size_t workers) {
    if (fs::is_regular_file(source)) {
        std::ifstream in(source);
        std::string line;
        std::getline(in, line);
        if (line.rfind("model_id,beta,", 0) != 0) throw FormatError("not an audit CSV: " + source.string());
        std::vector<double> betas;
        while (std::getline(in, line))
            if (!line.empty()) betas.push_back(std::stod(split_csv(line).at(1)));
        return betas;
    }
    if (input.groups.empty() || input.data.images.empty())
        throw UsageError("comparing checkpoint directories needs --images, --labels and --groups");
    const auto [d, meta] = input.load();
    const auto models = load_models(checkpoints_in(source));
    std::vector<double> betas;
    for (const auto& f : audit_population(models, d, meta, gls_options(input.weighting), workers).fits)
        betas.push_back(f.beta);
    return betas;
}

struct CompareCmd {
    DataFlags data;
    std::string groups, weighting = "sqrt-n";
    std::string a, b, alternative = "less", out;
    std::size_t* workers;

    explicit CompareCmd(std::size_t* w) : workers(w) {}

    void add(CLI::App* parent) {
        auto* cmd = parent->add_subcommand("compare", "one-sided Welch t-test on two slope populations");
        data.add(cmd, false);
        cmd->add_option("--groups", groups, "membership CSV")->check(CLI::ExistingFile);
        cmd->add_option("--weighting", weighting)->check(CLI::IsMember({"sqrt-n", "n"}))->capture_default_str();
        cmd->add_option("--a", a, "checkpoint directory or audit CSV")->required()->check(CLI::ExistingPath);
        cmd->add_option("--b", b, "checkpoint directory or audit CSV")->required()->check(CLI::ExistingPath);
        cmd->add_option("--alternative", alternative, "less: H1 beta_a < beta_b; greater: H1 beta_a > beta_b")
            ->check(CLI::IsMember({"less", "greater"}))
            ->capture_default_str();
        cmd->add_option("--out", out, "result CSV");
        cmd->callback([this] { run(); });
    }

    void run() {
        GroupedInput input{data, groups, weighting};
        const auto ba = betas_from(a, input, *workers), bb = betas_from(b, input, *workers);
        if (ba.size() < 2 || bb.size() < 2)
            throw ParameterError("compare needs at least 2 models per side (got " + std::to_string(ba.size()) +
                                 " and " + std::to_string(bb.size()) + ")");
        const auto r = two_sample_t_test(
            ba, bb, alternative == "less" ? Alternative::a_less_than_b : Alternative::a_greater_than_b);
        std::ostringstream row;
        row << "t,df,p_value,n_a,n_b\n"
            << format_double(r.t) << ',' << format_double(r.df) << ',' << format_double(r.p_value) << ','
            << ba.size() << ',' << bb.size() << '\n';
        std::cout << row.str();
        if (!out.empty()) {
            open_out(out) << row.str();
            write_config(sibling(out, ".config.json"), "fairness compare",
                         {{"a", a}, {"b", b}, {"alternative", alternative}, {"data", data.record()},
                          {"groups", groups}, {"weighting", weighting}, {"out", out}});
        }
    }
};

struct GlsCmd {
    std::string records, weighting = "sqrt-n", out;
    bool two_groups = false;

    void add(CLI::App* parent) {
        auto* cmd = parent->add_subcommand("gls", "GLS slope test on a group_id,g,n,correct CSV");
        cmd->add_option("--records", records)->required()->check(CLI::ExistingFile);
        cmd->add_option("--weighting", weighting)->check(CLI::IsMember({"sqrt-n", "n"}))->capture_default_str();
        cmd->add_flag("--allow-two-groups", two_groups, "accept an exact two-group interpolation");
        cmd->add_option("--out", out, "result CSV");
        cmd->callback([this] { run(); });
    }

    void run() {
        const auto recs = read_group_records_csv(records);
        GlsOptions o = gls_options(weighting);
        o.allow_two_groups = two_groups;
        const auto f = gls_fit(recs, o);
        std::ostringstream row;
        row << "beta,intercept,F0,nu1,nu2,p_value,perfect_fit\n"
            << format_double(f.beta) << ',' << format_double(f.intercept) << ',' << format_double(f.f0) << ','
            << f.nu1 << ',' << f.nu2 << ',' << format_double(f.p_value) << ',' << (f.perfect_fit ? 1 : 0) << '\n';
        std::cout << row.str();
        if (!out.empty()) {
            open_out(out) << row.str();
            write_config(sibling(out, ".config.json"), "fairness gls",
                         {{"records", records}, {"weighting", weighting}, {"allow_two_groups", two_groups},
                          {"out", out}});
        }
    }
};

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"perceptual attacks, DRO training and fairness audits for small image classifiers", "pdro"};
    app.require_subcommand(1);
    app.failure_message(CLI::FailureMessage::help);
    std::size_t workers = default_workers();
    app.add_option("--workers", workers, "worker threads (default: PDRO_WORKERS or all cores)")
        ->check(CLI::PositiveNumber);

    TrainCmd train;
    AttackCmd attack(&workers);
    DefenseCmd defense(&workers);
    DroGenCmd dro_gen;
    DroTrainCmd dro_train_cmd;
    DroSampleCmd dro_sample(&workers);
    SynthCmd synth;
    AuditCmd audit(&workers);
    CompareCmd compare(&workers);
    GlsCmd gls;

    train.add(app);
    attack.add(app);
    defense.add(app);
    auto* dro = app.add_subcommand("dro", "robust dataset generation and DRO training");
    dro->require_subcommand(1);
    dro_gen.add(dro);
    dro_train_cmd.add(dro);
    dro_sample.add(dro);
    auto* fairness = app.add_subcommand("fairness", "grouped-accuracy audits");
    fairness->require_subcommand(1);
    synth.add(fairness);
    audit.add(fairness);
    compare.add(fairness);
    gls.add(fairness);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return 2;
    } catch (const pdro::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
