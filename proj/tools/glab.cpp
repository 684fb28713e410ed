// glab: train the tiny denoiser, sample with any guidance configuration,
// run ablation sweeps, and run the analysis suite. All outputs are files
// under --out; every command is deterministic given (config, seed).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "glab/denoiser.hpp"
#include "glab/eval.hpp"
#include "glab/guidance.hpp"
#include "glab/io_util.hpp"
#include "glab/numerics.hpp"
#include "glab/oracle_model.hpp"
#include "glab/png_io.hpp"

using namespace glab;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// config registry: plain-text `key = value` lines, '#' comments, flag overrides

struct KeyInfo {
    const char* key;
    const char* def;
    const char* doc;
};

const std::vector<KeyInfo>& key_registry() {
    static const std::vector<KeyInfo> keys = {
        {"seed", "0", "base RNG seed shared by every stage"},
        {"out", "run", "output directory"},
        {"sched.kind", "linear", "noise schedule: linear | cosine"},
        {"sched.t", "100", "number of diffusion steps T"},
        {"sched.beta_start", "0.001", "linear schedule start"},
        {"sched.beta_end", "0.15", "linear schedule end"},
        {"data.kind", "", "dataset: procedural | mixture2d (required for train)"},
        {"data.n", "512", "dataset size"},
        {"data.height", "16", "procedural image height"},
        {"data.width", "16", "procedural image width"},
        {"model.base_channels", "8", "conv channels at full resolution"},
        {"model.mid_channels", "16", "channels at the attention resolution"},
        {"model.heads", "4", "attention heads"},
        {"model.time_embed", "16", "sinusoidal embedding width"},
        {"model.classes", "2", "class count (0 = unconditional)"},
        {"model.hidden", "64", "hidden width of the vector variant"},
        {"train.steps", "2000", "SGD steps"},
        {"train.lr", "0.05", "SGD learning rate"},
        {"train.batch", "16", "batch size"},
        {"train.class_drop", "0.15", "probability of dropping the class label"},
        {"checkpoint", "", "checkpoint path base (train writes, sample reads)"},
        {"guidance.kind", "none", "none | cg | cfg | blur | sag | sag_cfg"},
        {"guidance.scale", "0.1", "guidance scale s"},
        {"guidance.scale_cfg", "0.0", "fused-mode CFG scale s_c"},
        {"guidance.scale_sag", "0.0", "fused-mode SAG scale s_s"},
        {"guidance.sigma", "1", "blur sigma; 'inf' selects the channel-mean mode"},
        {"guidance.psi", "1", "masking threshold on the mean-1 attention map"},
        {"guidance.layer", "mid", "attention extraction layer"},
        {"guidance.variance", "beta", "reverse variance: beta | beta_tilde"},
        {"guidance.mask", "self_attention",
         "masking strategy: global | random | square | high_frequency | self_attention"},
        {"guidance.mask_fraction", "0.4", "target fraction for the fixed-fraction strategies"},
        {"guidance.class", "", "class id for cg/cfg/sag_cfg (empty = unconditional)"},
        {"guidance.gap_axis", "key", "attention pooling axis: key | query"},
        {"sample.n", "16", "number of chains"},
        {"sample.oracle", "false", "sample the analytic mixture oracle"},
        {"sample.compare_baseline", "false", "also run unguided sampling from the same seed"},
        {"sample.dump_attention", "false", "dump accumulated attention tensors"},
        {"sample.dump_limit", "64", "max per-sample tensor/PNG dumps"},
        {"sample.metrics", "true", "emit distribution metrics against the dataset"},
        {"ablate.axis", "", "sweep axis: scale | sigma | psi | strategy | layer"},
        {"ablate.values", "", "comma-separated sweep values"},
        {"analyze.run", "", "sample run directory (defaults to --out)"},
        {"analyze.psi", "1.0,1.3", "thresholds for the frequency analysis"},
        {"analyze.patch", "8", "patch size for the frequency analysis"},
        {"analyze.n", "256", "procedural samples for the IoU analysis"},
    };
    return keys;
}

struct Config {
    std::map<std::string, std::string> values;

    const std::string& get(const std::string& key) const {
        auto it = values.find(key);
        if (it == values.end()) throw ConfigError("unknown config key: " + key);
        return it->second;
    }
    void set(const std::string& key, const std::string& value) {
        auto it = values.find(key);
        if (it == values.end()) throw ConfigError("unknown config key: " + key);
        it->second = value;
    }
    bool empty(const std::string& key) const { return get(key).empty(); }

    double get_double(const std::string& key) const {
        const std::string& v = get(key);
        if (v == "inf") return std::numeric_limits<double>::infinity();
        try {
            std::size_t pos = 0;
            const double d = std::stod(v, &pos);
            if (pos != v.size()) throw std::invalid_argument(v);
            return d;
        } catch (const std::exception&) {
            throw ConfigError("key " + key + ": not a number: '" + v + "'");
        }
    }
    std::size_t get_size(const std::string& key) const {
        const double d = get_double(key);
        if (d < 0 || d != std::floor(d)) {
            throw ConfigError("key " + key + ": not a non-negative integer");
        }
        return static_cast<std::size_t>(d);
    }
    bool get_bool(const std::string& key) const {
        const std::string& v = get(key);
        if (v == "true" || v == "1") return true;
        if (v == "false" || v == "0") return false;
        throw ConfigError("key " + key + ": expected true/false");
    }

    static Config defaults() {
        Config c;
        for (const KeyInfo& k : key_registry()) c.values[k.key] = k.def;
        return c;
    }

    void load_file(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw ConfigError("cannot open config file: " + path);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            const std::size_t hash = line.find('#');
            if (hash != std::string::npos) line.resize(hash);
            auto trim = [](std::string s) {
                const auto b = s.find_first_not_of(" \t\r");
                const auto e = s.find_last_not_of(" \t\r");
                return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
            };
            const std::string t = trim(line);
            if (t.empty()) continue;
            const std::size_t eq = t.find('=');
            if (eq == std::string::npos) {
                throw ConfigError(path + ":" + std::to_string(lineno) +
                                  ": expected key = value");
            }
            set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
        }
    }

    std::string snapshot() const {
        std::ostringstream os;
        for (const auto& [k, v] : values) os << k << " = " << v << "\n";
        return os.str();
    }
};

void print_help() {
    std::cout <<
        "usage: glab <command> [flags]\n"
        "\n"
        "commands:\n"
        "  train     fit the tiny denoiser; writes checkpoint + loss CSV\n"
        "  sample    run the reverse process under a guidance configuration\n"
        "  ablate    sweep one guidance axis and tabulate metrics\n"
        "  analyze   frequency/IoU analyses and attention heatmaps of a run\n"
        "\n"
        "shared flags:\n"
        "  --config PATH   key = value file ('#' comments); flags override it\n"
        "  --seed U64      base seed\n"
        "  --out DIR       output directory\n"
        "\n"
        "sampling flags:\n"
        "  --guidance {none,cg,cfg,blur,sag,sag_cfg}\n"
        "  --scale F --scale-cfg F --scale-sag F --sigma F --psi F --layer NAME\n"
        "  --steps N --n N --oracle --compare-baseline --dump-attention\n"
        "  --checkpoint PATH --dataset NAME --axis NAME --values LIST --run DIR\n"
        "  --mask NAME --class N --train-steps N --lr F\n"
        "\n"
        "environment:\n"
        "  GLAB_THREADS    worker count override\n"
        "\n"
        "config keys (defaults):\n";
    for (const KeyInfo& k : key_registry()) {
        std::printf("  %-24s %-14s %s\n", k.key,
                    (std::string("[") + (k.def[0] ? k.def : "-") + "]").c_str(), k.doc);
    }
    std::cout << "\nexit codes: 0 success, 2 configuration error, 3 numeric failure\n";
}

Config parse_command_line(int argc, char** argv, int first_flag) {
    Config cfg = Config::defaults();
    std::vector<std::pair<std::string, std::string>> overrides;
    std::optional<std::string> config_path;
    int ablate_axis_count = 0;

    auto need_value = [&](int& i, const std::string& flag) -> std::string {
        if (i + 1 >= argc) throw ConfigError("flag " + flag + " needs a value");
        return argv[++i];
    };

    for (int i = first_flag; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--config") {
            config_path = need_value(i, a);
        } else if (a == "--seed") {
            overrides.emplace_back("seed", need_value(i, a));
        } else if (a == "--out") {
            overrides.emplace_back("out", need_value(i, a));
        } else if (a == "--guidance") {
            overrides.emplace_back("guidance.kind", need_value(i, a));
        } else if (a == "--scale") {
            overrides.emplace_back("guidance.scale", need_value(i, a));
        } else if (a == "--scale-cfg") {
            overrides.emplace_back("guidance.scale_cfg", need_value(i, a));
        } else if (a == "--scale-sag") {
            overrides.emplace_back("guidance.scale_sag", need_value(i, a));
        } else if (a == "--sigma") {
            overrides.emplace_back("guidance.sigma", need_value(i, a));
        } else if (a == "--psi") {
            overrides.emplace_back("guidance.psi", need_value(i, a));
        } else if (a == "--layer") {
            overrides.emplace_back("guidance.layer", need_value(i, a));
        } else if (a == "--class") {
            overrides.emplace_back("guidance.class", need_value(i, a));
        } else if (a == "--mask") {
            overrides.emplace_back("guidance.mask", need_value(i, a));
        } else if (a == "--steps") {
            overrides.emplace_back("sched.t", need_value(i, a));
        } else if (a == "--n") {
            overrides.emplace_back("sample.n", need_value(i, a));
        } else if (a == "--oracle") {
            overrides.emplace_back("sample.oracle", "true");
        } else if (a == "--compare-baseline") {
            overrides.emplace_back("sample.compare_baseline", "true");
        } else if (a == "--dump-attention") {
            overrides.emplace_back("sample.dump_attention", "true");
        } else if (a == "--checkpoint") {
            overrides.emplace_back("checkpoint", need_value(i, a));
        } else if (a == "--dataset") {
            overrides.emplace_back("data.kind", need_value(i, a));
        } else if (a == "--train-steps") {
            overrides.emplace_back("train.steps", need_value(i, a));
        } else if (a == "--lr") {
            overrides.emplace_back("train.lr", need_value(i, a));
        } else if (a == "--axis") {
            overrides.emplace_back("ablate.axis", need_value(i, a));
            ++ablate_axis_count;
        } else if (a == "--values") {
            overrides.emplace_back("ablate.values", need_value(i, a));
        } else if (a == "--run") {
            overrides.emplace_back("analyze.run", need_value(i, a));
        } else {
            throw ConfigError("unknown flag: " + a);
        }
    }
    if (config_path) cfg.load_file(*config_path);
    for (const auto& [k, v] : overrides) cfg.set(k, v);
    if (ablate_axis_count > 1 || cfg.get("ablate.axis").find(',') != std::string::npos) {
        throw ConfigError("ablate: sweep over exactly one axis");
    }
    return cfg;
}

// ---------------------------------------------------------------------------
// shared assembly helpers

NoiseSchedule make_schedule(const Config& cfg) {
    const std::string kind = cfg.get("sched.kind");
    const std::size_t T = cfg.get_size("sched.t");
    if (kind == "linear") {
        return linear_schedule(T, cfg.get_double("sched.beta_start"),
                               cfg.get_double("sched.beta_end"));
    }
    if (kind == "cosine") return cosine_schedule(T);
    throw ConfigError("sched.kind must be linear or cosine");
}

GuidanceConfig make_guidance(const Config& cfg) {
    GuidanceConfig g;
    g.kind = guidance_kind_from_string(cfg.get("guidance.kind"));
    g.scale = cfg.get_double("guidance.scale");
    g.scale_cfg = cfg.get_double("guidance.scale_cfg");
    g.scale_sag = cfg.get_double("guidance.scale_sag");
    g.sigma = cfg.get_double("guidance.sigma");
    g.psi = cfg.get_double("guidance.psi");
    g.layer = cfg.get("guidance.layer");
    const std::string var = cfg.get("guidance.variance");
    if (var == "beta") {
        g.variance = VarianceMode::FixedBeta;
    } else if (var == "beta_tilde") {
        g.variance = VarianceMode::PosteriorBetaTilde;
    } else {
        throw ConfigError("guidance.variance must be beta or beta_tilde");
    }
    g.mask = mask_kind_from_string(cfg.get("guidance.mask"));
    g.mask_fraction = cfg.get_double("guidance.mask_fraction");
    if (!cfg.empty("guidance.class")) {
        g.class_id = static_cast<int>(cfg.get_size("guidance.class"));
    }
    const std::string axis = cfg.get("guidance.gap_axis");
    if (axis == "key") {
        g.gap_axis = AggregateAxis::Key;
    } else if (axis == "query") {
        g.gap_axis = AggregateAxis::Query;
    } else {
        throw ConfigError("guidance.gap_axis must be key or query");
    }
    return g;
}

LabeledDataset procedural_training_set(const Config& cfg, std::vector<ProceduralSample>* raw) {
    ProceduralSpec spec;
    spec.height = cfg.get_size("data.height");
    spec.width = cfg.get_size("data.width");
    auto samples = procedural_dataset(cfg.get_size("data.n"),
                                      RngStream(cfg.get_size("seed"), 0xda7a), spec);
    LabeledDataset set;
    for (const auto& s : samples) set.emplace_back(s.image, s.label);
    if (raw) *raw = std::move(samples);
    return set;
}

void write_config_snapshot(const Config& cfg, const std::string& out) {
    ensure_dir(out);
    write_text_file(out + "/config.snapshot", cfg.snapshot());
}

std::string checkpoint_payload(const std::string& base) { return base + ".glab"; }
std::string checkpoint_manifest(const std::string& base) { return base + ".manifest"; }

void validate_layer(const Config& cfg, const EpsModel& model) {
    const auto layers = model.attention_layers();
    if (layers.empty()) return;
    const std::string& want = cfg.get("guidance.layer");
    if (std::find(layers.begin(), layers.end(), want) == layers.end()) {
        std::string all;
        for (const auto& l : layers) all += (all.empty() ? "" : ", ") + l;
        throw ConfigError("guidance.layer '" + want + "' not in model layers: " + all);
    }
}

// ---------------------------------------------------------------------------
// train

int cmd_train(const Config& cfg) {
    const std::string data_kind = cfg.get("data.kind");
    if (data_kind.empty()) {
        throw ConfigError("train: missing required key data.kind (procedural | mixture2d)");
    }
    const std::string out = cfg.get("out");
    const NoiseSchedule sched = make_schedule(cfg);

    LabeledDataset dataset;
    DenoiserConfig mcfg;
    mcfg.num_classes = cfg.get_size("model.classes");
    mcfg.time_embed = cfg.get_size("model.time_embed");
    if (data_kind == "procedural") {
        dataset = procedural_training_set(cfg, nullptr);
        mcfg.base_channels = cfg.get_size("model.base_channels");
        mcfg.mid_channels = cfg.get_size("model.mid_channels");
        mcfg.heads = cfg.get_size("model.heads");
    } else if (data_kind == "mixture2d") {
        RngStream rng(cfg.get_size("seed"), 0xda7a);
        for (auto& [g, label] : sample_labeled_mixture(MixtureSpec::two_gaussians_2d(),
                                                       cfg.get_size("data.n"), rng)) {
            dataset.emplace_back(std::move(g),
                                 mcfg.num_classes > 0 ? std::optional<int>(label) : std::nullopt);
        }
        mcfg.vector_dim = 2;
        mcfg.hidden = cfg.get_size("model.hidden");
    } else {
        throw ConfigError("data.kind must be procedural or mixture2d");
    }

    TinyDenoiser model(mcfg, RngStream(cfg.get_size("seed"), 0x1417));
    TrainOptions opts;
    opts.steps = cfg.get_size("train.steps");
    opts.learning_rate = cfg.get_double("train.lr");
    opts.batch_size = cfg.get_size("train.batch");
    opts.class_drop_prob = cfg.get_double("train.class_drop");

    const TrainResult result =
        train(model, dataset, sched, opts, RngStream(cfg.get_size("seed"), 0x7121));

    write_config_snapshot(cfg, out);
    ensure_dir(out + "/metrics");
    const std::string ckpt =
        cfg.empty("checkpoint") ? out + "/checkpoint" : cfg.get("checkpoint");
    model.save_checkpoint(checkpoint_payload(ckpt), checkpoint_manifest(ckpt));
    {
        std::ofstream os(out + "/metrics/loss.csv");
        os << "step,loss\n";
        for (std::size_t i = 0; i < result.loss_trace.size(); ++i) {
            os << i << ',' << fmt_double(result.loss_trace[i]) << '\n';
        }
    }
    save_schedule_csv(out + "/metrics/schedule.csv", sched);
    std::cout << "trained " << opts.steps << " steps; checkpoint at "
              << checkpoint_payload(ckpt) << "\n";
    if (!result.loss_trace.empty()) {
        std::cout << "final loss " << fmt_double(result.loss_trace.back()) << "\n";
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------
// sample

struct ModelBundle {
    std::unique_ptr<EpsModel> model;
    SampleShape shape;
    bool oracle = false;
};

ModelBundle load_model(const Config& cfg, const NoiseSchedule& sched) {
    ModelBundle b;
    if (cfg.get_bool("sample.oracle")) {
        b.model = std::make_unique<MixtureOracleModel>(MixtureSpec::two_gaussians_2d(), sched);
        b.shape = SampleShape{2, 1, 1};
        b.oracle = true;
        return b;
    }
    if (cfg.empty("checkpoint")) {
        throw ConfigError("sample: need --oracle or --checkpoint PATH");
    }
    const std::string ckpt = cfg.get("checkpoint");
    auto model = std::make_unique<TinyDenoiser>(
        TinyDenoiser::load_checkpoint(checkpoint_payload(ckpt), checkpoint_manifest(ckpt)));
    if (model->config().is_vector()) {
        b.shape = SampleShape{model->config().vector_dim, 1, 1};
    } else {
        b.shape = SampleShape{model->config().in_channels, cfg.get_size("data.height"),
                              cfg.get_size("data.width")};
    }
    b.model = std::move(model);
    return b;
}

void write_diagnostics_csv(const std::string& path, const SampleResult& res) {
    std::ofstream os(path);
    os << "chain,t,masked_fraction,eps_gap_norm\n";
    for (std::size_t chain = 0; chain < res.diagnostics.size(); ++chain) {
        for (const StepDiagnostics& d : res.diagnostics[chain]) {
            os << chain << ',' << d.timestep << ',' << fmt_double(d.masked_fraction) << ','
               << fmt_double(d.eps_gap_norm) << '\n';
        }
    }
}

void write_points_csv(const std::string& path, const std::vector<Grid>& samples) {
    std::ofstream os(path);
    os << "x0,x1\n";
    for (const Grid& g : samples) {
        os << fmt_double(g.data[0]) << ',' << fmt_double(g.data.size() > 1 ? g.data[1] : 0.0)
           << '\n';
    }
}

void dump_sample_outputs(const Config& cfg, const std::string& out, const std::string& tag,
                         const SampleResult& res, bool image) {
    ensure_dir(out + "/samples");
    ensure_dir(out + "/tensors");
    const std::size_t limit =
        std::min<std::size_t>(cfg.get_size("sample.dump_limit"), res.samples.size());
    if (image) {
        const std::size_t shown = std::min<std::size_t>(res.samples.size(), 64);
        const std::size_t cols = static_cast<std::size_t>(
            std::ceil(std::sqrt(static_cast<double>(shown))));
        const std::vector<Grid> tiles(res.samples.begin(), res.samples.begin() + shown);
        save_grid_montage_png(out + "/samples/" + tag + "grid.png", tiles, cols);
    } else {
        write_points_csv(out + "/samples/" + tag + "points.csv", res.samples);
    }
    char name[64];
    for (std::size_t i = 0; i < limit; ++i) {
        std::snprintf(name, sizeof(name), "%ssample_%04zu.glab", tag.c_str(), i);
        save_grid(out + "/tensors/" + name, res.samples[i]);
        if (!res.accumulated_attention.empty()) {
            std::snprintf(name, sizeof(name), "%sattention_%04zu.glab", tag.c_str(), i);
            save_grid(out + "/tensors/" + name, res.accumulated_attention[i]);
        }
    }
    write_diagnostics_csv(out + "/metrics/" + tag + "diagnostics.csv", res);
}

// distribution metrics against the configured reference data
void emit_metrics(const Config& cfg, const std::string& out, const std::string& tag,
                  const SampleResult& res, const ModelBundle& bundle) {
    std::ofstream os(out + "/metrics/" + tag + "summary.csv");
    os << "metric,value\n";
    double mean_fraction = 0.0, mean_gap = 0.0;
    std::size_t steps = 0;
    for (const auto& chain : res.diagnostics) {
        for (const auto& d : chain) {
            mean_fraction += d.masked_fraction;
            mean_gap += d.eps_gap_norm;
            ++steps;
        }
    }
    if (steps > 0) {
        mean_fraction /= static_cast<double>(steps);
        mean_gap /= static_cast<double>(steps);
    }
    os << "masked_fraction," << fmt_double(mean_fraction) << '\n';
    os << "eps_gap_norm," << fmt_double(mean_gap) << '\n';

    if (!cfg.get_bool("sample.metrics")) return;
    if (bundle.shape.height == 1) {
        // vector pipeline (oracle or mixture-trained checkpoint): fresh draws
        RngStream data_rng(cfg.get_size("seed"), 0xf7e5);
        const auto data = sample_mixture(MixtureSpec::two_gaussians_2d(),
                                         std::max<std::size_t>(res.samples.size(), 1000),
                                         data_rng);
        const double ed = energy_distance(res.samples, data);
        os << "energy_distance," << fmt_double(ed) << '\n';
        std::cout << tag << "energy distance to fresh data: " << fmt_double(ed) << "\n";
        return;
    }
    // image pipeline: energy distance plus both documented Frechet proxies
    std::vector<ProceduralSample> raw;
    procedural_training_set(cfg, &raw);
    std::vector<Grid> data_images;
    for (auto& s : raw) data_images.push_back(std::move(s.image));
    const double ed = energy_distance(res.samples, data_images);
    const GaussianFit data_raw = fit_gaussian(data_images);
    const GaussianFit fit_raw = fit_gaussian(res.samples);
    const double fg_raw =
        frechet_gaussian(fit_raw.mean, fit_raw.cov, data_raw.mean, data_raw.cov);
    const PcaBasis pca = fit_pca(data_images, 16);
    const GaussianFit data_fit = fit_gaussian(pca.project_all(data_images));
    const GaussianFit fit = fit_gaussian(pca.project_all(res.samples));
    const double fg = frechet_gaussian(fit.mean, fit.cov, data_fit.mean, data_fit.cov);
    os << "energy_distance," << fmt_double(ed) << '\n';
    os << "frechet_raw," << fmt_double(fg_raw) << '\n';
    os << "frechet_pca16," << fmt_double(fg) << '\n';
    std::cout << tag << "energy distance " << fmt_double(ed) << ", frechet(raw) "
              << fmt_double(fg_raw) << ", frechet(PCA-16) " << fmt_double(fg) << "\n";
}

int cmd_sample(const Config& cfg) {
    const std::string out = cfg.get("out");
    const NoiseSchedule sched = make_schedule(cfg);
    const ModelBundle bundle = load_model(cfg, sched);
    const GuidanceConfig guidance = make_guidance(cfg);
    validate_layer(cfg, *bundle.model);

    SampleOptions opts;
    opts.collect_attention = cfg.get_bool("sample.dump_attention");

    write_config_snapshot(cfg, out);
    ensure_dir(out + "/metrics");
    const RngStream base(cfg.get_size("seed"), 0x5a3f);
    const std::size_t n = cfg.get_size("sample.n");
    const bool image = !bundle.oracle && bundle.shape.height > 1;

    const SampleResult res = sample(*bundle.model, sched, guidance, n, base, bundle.shape, opts);
    dump_sample_outputs(cfg, out, "", res, image);
    emit_metrics(cfg, out, "", res, bundle);
    save_schedule_csv(out + "/metrics/schedule.csv", sched);

    if (cfg.get_bool("sample.compare_baseline")) {
        GuidanceConfig unguided = guidance;
        unguided.kind = GuidanceKind::None;
        const SampleResult keep =
            sample(*bundle.model, sched, unguided, n, base, bundle.shape, opts);
        dump_sample_outputs(cfg, out, "baseline_", keep, image);
        emit_metrics(cfg, out, "baseline_", keep, bundle);
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------
// ablate

int cmd_ablate(const Config& cfg) {
    const std::string axis = cfg.get("ablate.axis");
    if (axis.empty()) throw ConfigError("ablate: missing required key ablate.axis");
    const std::string values_csv = cfg.get("ablate.values");
    if (values_csv.empty()) throw ConfigError("ablate: missing required key ablate.values");
    if (axis != "scale" && axis != "sigma" && axis != "psi" && axis != "strategy" &&
        axis != "layer") {
        throw ConfigError("ablate.axis must be one of scale, sigma, psi, strategy, layer");
    }

    std::vector<std::string> values;
    std::stringstream ss(values_csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (!tok.empty()) values.push_back(tok);
    }
    if (values.empty()) throw ConfigError("ablate: empty value list");

    const std::string out = cfg.get("out");
    const NoiseSchedule sched = make_schedule(cfg);
    const ModelBundle bundle = load_model(cfg, sched);
    write_config_snapshot(cfg, out);
    ensure_dir(out + "/metrics");

    // reference data and the raw-space Gaussian fit, shared by every row
    std::vector<Grid> data_images;
    if (bundle.shape.height == 1) {
        RngStream data_rng(cfg.get_size("seed"), 0xf7e5);
        data_images = sample_mixture(MixtureSpec::two_gaussians_2d(), 2000, data_rng);
    } else {
        std::vector<ProceduralSample> raw;
        procedural_training_set(cfg, &raw);
        for (auto& s : raw) data_images.push_back(std::move(s.image));
    }
    const GaussianFit data_fit = fit_gaussian(data_images);

    std::ofstream os(out + "/metrics/ablation.csv");
    os << "axis,value,energy_distance,frechet,masked_fraction,eps_gap_norm\n";

    const RngStream base(cfg.get_size("seed"), 0x5a3f);
    const std::size_t n = cfg.get_size("sample.n");
    for (const std::string& value : values) {
        Config row_cfg = cfg;
        if (axis == "scale") {
            row_cfg.set("guidance.scale", value);
        } else if (axis == "sigma") {
            row_cfg.set("guidance.sigma", value);
        } else if (axis == "psi") {
            row_cfg.set("guidance.psi", value);
        } else if (axis == "strategy") {
            row_cfg.set("guidance.mask", value);
        } else {
            row_cfg.set("guidance.layer", value);
        }
        const GuidanceConfig guidance = make_guidance(row_cfg);
        validate_layer(row_cfg, *bundle.model);
        const SampleResult res =
            sample(*bundle.model, sched, guidance, n, base, bundle.shape, SampleOptions{});

        double fraction = 0.0, gap = 0.0;
        std::size_t steps = 0;
        for (const auto& chain : res.diagnostics) {
            for (const auto& d : chain) {
                fraction += d.masked_fraction;
                gap += d.eps_gap_norm;
                ++steps;
            }
        }
        fraction /= static_cast<double>(std::max<std::size_t>(steps, 1));
        gap /= static_cast<double>(std::max<std::size_t>(steps, 1));

        const double ed = energy_distance(res.samples, data_images);
        const GaussianFit fit = fit_gaussian(res.samples);
        const double fg = frechet_gaussian(fit.mean, fit.cov, data_fit.mean, data_fit.cov);
        os << axis << ',' << value << ',' << fmt_double(ed) << ',' << fmt_double(fg) << ','
           << fmt_double(fraction) << ',' << fmt_double(gap) << '\n';
        std::cout << axis << "=" << value << ": energy " << fmt_double(ed) << ", frechet "
                  << fmt_double(fg) << ", fraction " << fmt_double(fraction) << "\n";
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------
// analyze

int cmd_analyze(const Config& cfg) {
    const std::string out = cfg.get("out");
    const std::string run = cfg.empty("analyze.run") ? out : cfg.get("analyze.run");
    if (!file_exists(run + "/config.snapshot")) {
        throw ConfigError("analyze: " + run +
                          " is not a completed sample run (config.snapshot missing)");
    }
    Config run_cfg = Config::defaults();
    run_cfg.load_file(run + "/config.snapshot");

    // collect the dumped samples and their accumulated attention maps
    std::vector<Grid> images, attention;
    for (std::size_t i = 0;; ++i) {
        char sname[96], aname[96];
        std::snprintf(sname, sizeof(sname), "%s/tensors/sample_%04zu.glab", run.c_str(), i);
        std::snprintf(aname, sizeof(aname), "%s/tensors/attention_%04zu.glab", run.c_str(), i);
        if (!file_exists(sname)) break;
        if (!file_exists(aname)) {
            throw ConfigError(
                "analyze: attention dumps missing; rerun sample with --dump-attention");
        }
        images.push_back(load_grid(sname));
        attention.push_back(load_grid(aname));
    }
    if (images.empty()) {
        throw ConfigError("analyze: no sample tensors under " + run +
                          "/tensors; rerun sample with --dump-attention");
    }

    ensure_dir(out + "/metrics");
    ensure_dir(out + "/figures");
    write_config_snapshot(cfg, out);

    // frequency profiles per psi
    std::vector<double> psi_list;
    {
        std::stringstream ss(cfg.get("analyze.psi"));
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            if (!tok.empty()) psi_list.push_back(std::stod(tok));
        }
    }
    const std::size_t patch = cfg.get_size("analyze.patch");
    for (double psi : psi_list) {
        const FrequencyProfile p = frequency_analysis(images, attention, patch, psi);
        std::ostringstream name;
        name << out << "/metrics/frequency_psi" << fmt_double(psi) << ".csv";
        std::ofstream os(name.str());
        os << "bin,mean_masked,mean_all,pct_diff\n";
        std::vector<double> pd_bars(kRadialBins, 0.0);
        for (std::size_t b = 0; b < kRadialBins; ++b) {
            os << b << ',' << fmt_double(p.patches_masked > 0 ? p.bins_masked[b] : 0.0) << ','
               << fmt_double(p.bins_all[b]) << ',';
            if (p.pct_diff[b]) {
                os << fmt_double(*p.pct_diff[b]);
                pd_bars[b] = *p.pct_diff[b];
            } else {
                os << "empty";
            }
            os << '\n';
        }
        save_bar_strip_png(out + "/figures/pct_diff_psi" + fmt_double(psi) + ".png", pd_bars);
        std::cout << "frequency psi=" << fmt_double(psi) << ": " << p.patches_masked << "/"
                  << p.patches_total << " patches masked";
        if (p.pct_diff[kRadialBins - 1]) {
            std::cout << ", top-bin PD " << fmt_double(*p.pct_diff[kRadialBins - 1]) << "%";
        }
        std::cout << "\n";
    }

    // IoU against procedural ground truth via the run's checkpoint
    if (!run_cfg.empty("checkpoint")) {
        const std::string ckpt = run_cfg.get("checkpoint");
        const TinyDenoiser model = TinyDenoiser::load_checkpoint(checkpoint_payload(ckpt),
                                                                 checkpoint_manifest(ckpt));
        const NoiseSchedule sched = make_schedule(run_cfg);
        const GuidanceConfig guidance = make_guidance(run_cfg);

        ProceduralSpec spec;
        spec.height = run_cfg.get_size("data.height");
        spec.width = run_cfg.get_size("data.width");
        const auto data = procedural_dataset(cfg.get_size("analyze.n"),
                                             RngStream(cfg.get_size("seed"), 0x10f0), spec);

        std::ofstream os(out + "/metrics/iou.csv");
        os << "psi,iou,random_iou,pct_diff,n\n";
        RngStream iou_rng(cfg.get_size("seed"), 0xba5e);
        for (double psi : psi_list) {
            double iou_sum = 0.0, rand_sum = 0.0;
            for (std::size_t i = 0; i < data.size(); ++i) {
                Grid accum(1, spec.height, spec.width, 0.0);
                std::size_t count = 0;
                for (std::size_t t = 5; t <= sched.T; t += 5) {
                    RngStream noise = iou_rng.derive(i * 4096 + t);
                    const Grid eps = standard_normal(noise, 1, spec.height, spec.width);
                    const Grid x_t = forward_diffuse(data[i].image, t, eps, sched);
                    const DenoiserOutput o = model.evaluate(x_t, t, std::nullopt);
                    const AttentionMap m =
                        aggregate_attention(*o.attn_stack, o.attn_grid_h, o.attn_grid_w,
                                            spec.height, spec.width, guidance.gap_axis);
                    for (std::size_t p = 0; p < accum.data.size(); ++p) {
                        accum.data[p] += m.values[p];
                    }
                    ++count;
                }
                for (double& v : accum.data) v /= static_cast<double>(count);
                AttentionMap acc;
                acc.height = spec.height;
                acc.width = spec.width;
                acc.values = accum.data;
                RngStream baseline = iou_rng.derive(0xbb00 + i);
                const IouResult r =
                    mask_iou(threshold_mask(acc, psi), data[i].foreground, baseline);
                iou_sum += r.iou;
                rand_sum += r.random_iou;
            }
            const double iou = iou_sum / static_cast<double>(data.size());
            const double rand_iou = rand_sum / static_cast<double>(data.size());
            const double pct = rand_iou > 1e-12 ? 100.0 * (iou - rand_iou) / rand_iou : 0.0;
            os << fmt_double(psi) << ',' << fmt_double(iou) << ',' << fmt_double(rand_iou)
               << ',' << fmt_double(pct) << ',' << data.size() << '\n';
            std::cout << "iou psi=" << fmt_double(psi) << ": self-attn " << fmt_double(iou)
                      << " vs random " << fmt_double(rand_iou) << " (" << fmt_double(pct)
                      << "% diff)\n";
        }

        // per-head heatmaps of one mid-trajectory evaluation: layers x (heads+1)
        {
            RngStream noise(cfg.get_size("seed"), 0xc0de);
            const Grid eps = standard_normal(noise, 1, spec.height, spec.width);
            const std::size_t t_mid = std::max<std::size_t>(1, sched.T / 2);
            const Grid x_t = forward_diffuse(data[0].image, t_mid, eps, sched);
            const DenoiserOutput o = model.evaluate(x_t, t_mid, std::nullopt);
            for (const std::string& layer : model.attention_layers()) {
                for (std::size_t h = 0; h < o.attn_stack->heads; ++h) {
                    AttnStack one;
                    one.heads = 1;
                    one.tokens = o.attn_stack->tokens;
                    one.a.assign(one.tokens * one.tokens, 0.0);
                    for (std::size_t q = 0; q < one.tokens; ++q) {
                        for (std::size_t k = 0; k < one.tokens; ++k) {
                            one.at(0, q, k) = o.attn_stack->at(h, q, k);
                        }
                    }
                    const AttentionMap m =
                        aggregate_attention(one, o.attn_grid_h, o.attn_grid_w, spec.height,
                                            spec.width, guidance.gap_axis);
                    save_heatmap_png(out + "/figures/attn_" + layer + "_head" +
                                         std::to_string(h) + ".png",
                                     m.values, m.height, m.width);
                }
                const AttentionMap mean_map =
                    aggregate_attention(*o.attn_stack, o.attn_grid_h, o.attn_grid_w,
                                        spec.height, spec.width, guidance.gap_axis);
                save_heatmap_png(out + "/figures/attn_" + layer + "_mean.png",
                                 mean_map.values, mean_map.height, mean_map.width);
                const Mask mask =
                    threshold_mask(mean_map, psi_list.empty() ? 1.0 : psi_list[0]);
                save_mask_png(out + "/figures/attn_" + layer + "_mask.png", mask);
                // the same map and mask as binary tensor dumps
                Grid map_grid(1, mean_map.height, mean_map.width);
                map_grid.data = mean_map.values;
                save_grid(out + "/figures/attn_" + layer + "_mean.glab", map_grid);
                Grid mask_grid(1, mask.height, mask.width);
                for (std::size_t p = 0; p < mask.bits.size(); ++p) {
                    mask_grid.data[p] = mask.bits[p] ? 1.0 : 0.0;
                }
                save_grid(out + "/figures/attn_" + layer + "_mask.glab", mask_grid);
            }
        }
    } else {
        std::cout << "analyze: run has no checkpoint key; skipping IoU and heatmaps\n";
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2 || std::string(argv[1]) == "--help" || std::string(argv[1]) == "-h" ||
        std::string(argv[1]) == "help") {
        print_help();
        return argc < 2 ? kExitConfig : kExitOk;
    }
    const std::string command = argv[1];
    try {
        const Config cfg = parse_command_line(argc, argv, 2);
        if (command == "train") return cmd_train(cfg);
        if (command == "sample") return cmd_sample(cfg);
        if (command == "ablate") return cmd_ablate(cfg);
        if (command == "analyze") return cmd_analyze(cfg);
        std::cerr << "unknown command: " << command << "\n";
        return kExitConfig;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const CapabilityError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DivergenceError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::out_of_range& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    }
}
