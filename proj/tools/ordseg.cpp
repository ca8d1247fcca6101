// ordseg: command-line front end for the ordinal segmentation library.
//
// Exit codes: 0 success, 1 invalid input or configuration, 2 computation
// failure (diverged training, empty regions, failed gradient checks).

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ordseg/ordseg.hpp"

namespace fs = std::filesystem;
using namespace ordseg;

namespace {

constexpr int kExitInput = 1;
constexpr int kExitCompute = 2;

std::string fmt(const char* spec, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

std::string sig12(double v) { return fmt("%.12g", v); }
std::string pct1(double v) { return fmt("%.1f", v); }
std::string exact(double v) { return fmt("%.17g", v); }

ProbMap load_probs(const fs::path& path) {
    const ad::Tensor t = io::read_tensor(path);
    if (t.rank() != 3) throw ValidationError(path.string() + ": expected a rank-3 [H,W,K] tensor, got " + ad::shape_string(t.shape()));
    return ProbMap(t.to_grid());
}

void require_same_plane(int h1, int w1, int h2, int w2) {
    if (h1 != h2 || w1 != w2) {
        throw ValidationError("shape mismatch: prediction is " + std::to_string(h1) + "x" + std::to_string(w1) +
                              ", ground truth is " + std::to_string(h2) + "x" + std::to_string(w2));
    }
}

void require_range(const char* flag, double v, double lo, double hi) {
    if (v < lo || v > hi) {
        throw ConfigError(std::string(flag) + " = " + sig12(v) + " is outside [" + sig12(lo) + ", " + sig12(hi) +
                          "]; pass --unsafe to override");
    }
}

/// Bad input or settings exit 1; failures during computation exit 2.
int exit_code_for(const Error& e) {
    const bool input = dynamic_cast<const ValidationError*>(&e) || dynamic_cast<const ConfigError*>(&e) ||
                       dynamic_cast<const UsageError*>(&e) || dynamic_cast<const FormatError*>(&e) ||
                       dynamic_cast<const PartitionError*>(&e) || dynamic_cast<const GeometryError*>(&e) ||
                       dynamic_cast<const InsufficientDataError*>(&e);
    return input ? kExitInput : kExitCompute;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
    std::string pred, gt;
    double epsilon = kDefaultCsEpsilon;
};

void run_eval(const EvalArgs& a) {
    const io::LabelFile gt = io::read_labels(a.gt);
    MetricReport report;
    if (io::is_tensor_file(a.pred)) {
        const ProbMap probs = load_probs(a.pred);
        require_same_plane(probs.height(), probs.width(), gt.labels.height(), gt.labels.width());
        gt.labels.validate(ClassConfig(probs.classes()));
        report = evaluate_probs(probs, gt.labels, a.epsilon);
    } else {
        const io::LabelFile pred = io::read_labels(a.pred);
        require_same_plane(pred.labels.height(), pred.labels.width(), gt.labels.height(), gt.labels.width());
        report = evaluate_labels(pred.labels, gt.labels, ClassConfig(std::max(pred.k_classes, gt.k_classes)), a.epsilon);
    }
    std::cout << "dice=" << pct1(report.dice_percent) << " cs=" << pct1(report.cs_percent);
    if (report.up_percent) std::cout << " up=" << pct1(*report.up_percent);
    std::cout << "\n";
}

// ---------------------------------------------------------------------------

struct LossArgs {
    std::string name, pred, gt, grad;
    std::optional<double> lambda, delta, delta_conf, gamma_clamp, gamma_decay, gamma_hat;
    std::optional<int> p;
    bool unsafe = false;
};

LossSelection loss_selection(const LossArgs& a) {
    LossSelection sel;
    sel.kind = parse_ordinal_loss(a.name);
    const OrdinalLoss k = sel.kind;
    auto reject_unless = [&](bool applies, const char* flag, bool given) {
        if (given && !applies) throw ConfigError(std::string(flag) + " does not apply to loss " + a.name);
    };
    reject_unless(k == OrdinalLoss::qul || k == OrdinalLoss::expmse, "--lambda", a.lambda.has_value());
    reject_unless(k == OrdinalLoss::qul || k == OrdinalLoss::o2, "--delta", a.delta.has_value());
    reject_unless(k == OrdinalLoss::csdt || k == OrdinalLoss::cssdf, "--delta-conf", a.delta_conf.has_value());
    reject_unless(k == OrdinalLoss::csdt, "--gamma-clamp", a.gamma_clamp.has_value());
    reject_unless(k == OrdinalLoss::cssdf, "--gamma-decay", a.gamma_decay.has_value());
    reject_unless(k == OrdinalLoss::cssdf, "--gamma-hat", a.gamma_hat.has_value());
    reject_unless(k == OrdinalLoss::cssdf, "--p", a.p.has_value());

    if (a.lambda) sel.pointwise.qul_lambda = sel.pointwise.expmse_lambda = *a.lambda;
    if (a.delta) sel.pointwise.qul_delta = sel.pointwise.o2_delta = *a.delta;
    if (a.delta_conf) sel.spatial.delta_conf = *a.delta_conf;
    if (a.gamma_clamp) sel.spatial.gamma_clamp = *a.gamma_clamp;
    if (a.gamma_decay) sel.spatial.gamma_decay = *a.gamma_decay;
    if (a.gamma_hat) sel.spatial.gamma_hat = *a.gamma_hat;
    if (a.p) sel.spatial.p_exponent = *a.p;

    if (!a.unsafe) {
        if (k == OrdinalLoss::qul || k == OrdinalLoss::o2) {
            require_range("--delta", k == OrdinalLoss::qul ? sel.pointwise.qul_delta : sel.pointwise.o2_delta, 0.05, 0.7);
        }
        if (k == OrdinalLoss::qul || k == OrdinalLoss::expmse) {
            require_range("--lambda", k == OrdinalLoss::qul ? sel.pointwise.qul_lambda : sel.pointwise.expmse_lambda, 0.1, 1e4);
        }
        if (k == OrdinalLoss::cssdf) {
            require_range("--gamma-decay", sel.spatial.gamma_decay, 0.05, 1.0);
            require_range("--delta-conf", sel.spatial.delta_conf, 0.05, 0.05);
        }
    }
    sel.validate();
    return sel;
}

void run_loss(const LossArgs& a) {
    const LossSelection sel = loss_selection(a);
    const ProbMap probs = load_probs(a.pred);
    const io::LabelFile gt = io::read_labels(a.gt);
    require_same_plane(probs.height(), probs.width(), gt.labels.height(), gt.labels.width());
    gt.labels.validate(ClassConfig(probs.classes()));

    ad::Graph g;
    ad::Var x = g.variable(ad::Tensor::from_grid(probs.grid()));
    ad::Var loss = ordinal_term(x, gt.labels, sel);
    std::cout << sig12(loss.item()) << "\n";
    if (!a.grad.empty()) {
        g.backward(loss);
        io::write_tensor(a.grad, x.grad());
    }
}

// ---------------------------------------------------------------------------

struct DtArgs {
    std::string labels, probs, out;
    int cls = 1;
    double delta_conf = 0.05;
    bool is_signed = false;
    std::optional<double> cap;
};

void run_dt(const DtArgs& a) {
    if (a.labels.empty() == a.probs.empty()) throw UsageError("give exactly one of --labels or --probs");
    BinaryMask mask = [&] {
        if (!a.labels.empty()) {
            const io::LabelFile lf = io::read_labels(a.labels);
            if (a.cls < 1 || a.cls > lf.k_classes) throw ConfigError("--class must lie in 1.." + std::to_string(lf.k_classes));
            return class_mask(lf.labels, a.cls);
        }
        const ProbMap probs = load_probs(a.probs);
        return threshold_mask(probs, a.cls, a.delta_conf);
    }();
    if (a.cap && !(*a.cap > 0.0)) throw ConfigError("--cap must be > 0");
    Grid<double> field;
    if (a.is_signed) {
        SignedDistField sdf = signed_df(mask);
        if (a.cap) sdf = clamp_sdf(sdf, *a.cap);
        field = sdf.grid();
    } else {
        field = a.cap ? saturated_dt(mask, *a.cap).grid() : euclidean_dt(mask).grid();
    }
    double lo = field.data().front(), hi = lo;
    for (double v : field.data()) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    std::cout << "height=" << field.height() << " width=" << field.width() << " min=" << sig12(lo) << " max=" << sig12(hi)
              << "\n";
    if (!a.out.empty()) io::write_tensor(a.out, ad::Tensor::from_grid(field));
}

// ---------------------------------------------------------------------------

Interval parse_interval(const std::string& text, const char* flag) {
    std::istringstream in(text);
    double mu = 0.0, sigma = 0.0;
    char comma = 0;
    std::string rest;
    if (!(in >> mu >> comma >> sigma) || comma != ',' || (in >> rest)) {
        throw ValidationError(std::string(flag) + " expects \"mu,sigma\", got \"" + text + "\"");
    }
    if (!std::isfinite(mu) || !std::isfinite(sigma) || sigma < 0.0) {
        throw ValidationError(std::string(flag) + " needs finite mu and sigma >= 0");
    }
    return {mu, sigma, 0};
}

void run_compare(const std::string& a, const std::string& b, double rho) {
    const ComparisonVerdict v = compare_intervals(parse_interval(a, "--a"), parse_interval(b, "--b"), rho);
    std::cout << describe(v) << "\n";
    if (v.rho) {
        std::cout << "rho=" << sig12(*v.rho) << " threshold=" << sig12(v.rho_threshold) << "\n";
    } else if (v.rho_skipped) {
        std::cout << "rho=skipped (lower-mean interval has zero sigma)\n";
    } else {
        std::cout << "rho=none (equal means)\n";
    }
}

// ---------------------------------------------------------------------------

struct GradArgs {
    std::string name;
    GradCheckSpec spec;
    double lambda = 1.0;
};

int run_gradcheck(GradArgs a) {
    a.spec.loss.kind = parse_ordinal_loss(a.name);
    a.spec.loss.lambda = a.lambda;
    const GradCheckSummary s = random_gradcheck(a.spec);
    std::cout << "name=" << a.name << (a.spec.with_ce ? "+ce" : "") << " k=" << a.spec.k_classes
              << " draws=" << s.draws << " passed=" << s.passed << " rejected=" << s.rejected
              << " max_rel_error=" << fmt("%.3e", s.max_rel_error) << " max_abs_error=" << fmt("%.3e", s.max_abs_error)
              << "\n";
    return s.ok() ? 0 : kExitCompute;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
    SceneSpec spec;
    std::string geometry = "concentric_rings";
    std::string image, labels;
};

void run_synth(SynthArgs a) {
    a.spec.geometry = parse_geometry(a.geometry);
    const Scene scene = generate(a.spec);
    if (!a.image.empty()) io::write_tensor(a.image, ad::Tensor::from_grid(scene.image));
    if (!a.labels.empty()) io::write_labels(a.labels, scene.labels, a.spec.k_classes);
    std::cout << "geometry=" << to_string(a.spec.geometry) << " height=" << a.spec.height << " width=" << a.spec.width
              << " k=" << a.spec.k_classes << " cs=" << pct1(100.0 * cs_metric(scene.labels)) << "\n";
}

// ---------------------------------------------------------------------------

struct DemoArgs {
    std::string loss = "ce";
    std::string geometry = "concentric_rings";
    std::string out = "train-demo-out";
    std::optional<double> lambda, delta, delta_conf, gamma_clamp, gamma_decay;
    std::optional<int> p;
    int scenes = 32;
    std::uint64_t seed = 0;
    int jobs = 1;
    bool baseline = false;
    SceneSpec scene;
    TrainConfig train;
};

std::string join(const std::vector<double>& v) {
    std::string s;
    for (std::size_t n = 0; n < v.size(); ++n) s += (n ? ";" : "") + exact(v[n]);
    return s;
}

std::string interval_text(const Interval& i) { return pct1(i.mu) + " ± " + pct1(i.sigma); }

void run_train_demo(DemoArgs a) {
    if (a.scenes < 10) throw UsageError("--scenes must be at least 10, got " + std::to_string(a.scenes));
    LossSelection sel;
    sel.kind = parse_ordinal_loss(a.loss);
    sel.lambda = a.lambda.value_or(sel.kind == OrdinalLoss::none ? 0.0 : 1.0);
    if (a.delta) sel.pointwise.qul_delta = sel.pointwise.o2_delta = *a.delta;
    if (a.delta_conf) sel.spatial.delta_conf = *a.delta_conf;
    if (a.gamma_clamp) sel.spatial.gamma_clamp = *a.gamma_clamp;
    if (a.gamma_decay) sel.spatial.gamma_decay = *a.gamma_decay;
    if (a.p) sel.spatial.p_exponent = *a.p;

    a.scene.geometry = parse_geometry(a.geometry);
    a.scene.seed = a.seed;
    a.train.seed = a.seed;
    const Batch data = make_dataset(a.scene, static_cast<std::size_t>(a.scenes));

    std::vector<LossSelection> grid;
    if (a.baseline && sel.kind != OrdinalLoss::none) grid.push_back(LossSelection{});
    grid.push_back(sel);
    const auto rows = grid_run(data, grid, a.train, a.jobs);

    fs::create_directories(a.out);
    std::ofstream runs(fs::path(a.out) / "runs.txt", std::ios::trunc);
    std::ofstream csv(fs::path(a.out) / "summary.csv", std::ios::trunc);
    if (!runs || !csv) throw FormatError("cannot write results under " + a.out);
    csv << "key,n_folds,dice_mu,dice_sigma,cs_mu,cs_sigma,up_mu,up_sigma,dice_verdict,cs_verdict,up_verdict\n";
    std::cout << "loss | Dice (%) | CS (%) | UP (%)\n";
    for (const GridRow& row : rows) {
        for (const RunRecord& r : row.folds) {
            runs << "key=\"" << r.key << "\" fold=" << r.fold << " selected_epoch=" << r.selected_epoch
                 << " epochs_run=" << r.epochs_run << " dice=" << exact(r.test.dice_percent)
                 << " cs=" << exact(r.test.cs_percent) << " up=" << exact(*r.test.up_percent)
                 << " mean_variance=" << exact(r.test_mean_variance) << " train_loss=" << join(r.train_loss)
                 << " validation_loss=" << join(r.validation_loss) << "\n";
        }
        auto verdict = [](const std::optional<ComparisonVerdict>& v) { return v ? describe(*v) : std::string(); };
        csv << "\"" << row.selection.key() << "\"," << row.dice.n_folds << "," << exact(row.dice.mu) << ","
            << exact(row.dice.sigma) << "," << exact(row.cs.mu) << "," << exact(row.cs.sigma) << ","
            << exact(row.up.mu) << "," << exact(row.up.sigma) << ",\"" << verdict(row.dice_vs_baseline) << "\",\""
            << verdict(row.cs_vs_baseline) << "\",\"" << verdict(row.up_vs_baseline) << "\"\n";
        std::cout << row.selection.key() << " | " << interval_text(row.dice) << " | " << interval_text(row.cs) << " | "
                  << interval_text(row.up) << "\n";
    }
    // Verdicts name the baseline "first" or "second" from the ordinal row's view.
    for (std::size_t r = 1; r < rows.size(); ++r) {
        std::cout << "vs ce: dice " << describe(*rows[r].dice_vs_baseline) << "; cs "
                  << describe(*rows[r].cs_vs_baseline) << "; up " << describe(*rows[r].up_vs_baseline) << "\n";
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Ordinal segmentation losses, metrics and training tools"};
    app.require_subcommand(1);

    EvalArgs eval_args;
    auto* eval = app.add_subcommand("eval", "Dice, CS and UP of a prediction against ground truth");
    eval->add_option("--pred", eval_args.pred, "Probability tensor or label file")->required();
    eval->add_option("--gt", eval_args.gt, "Ground-truth label file")->required();
    eval->add_option("--epsilon", eval_args.epsilon, "CS denominator guard");

    LossArgs loss_args;
    auto* loss = app.add_subcommand("loss", "Evaluate one loss on a probability tensor");
    loss->add_option("--name", loss_args.name, "ce|qul|expmse|o2|csnp|csdt|cssdf")->required();
    loss->add_option("--pred", loss_args.pred, "Probability tensor [H,W,K]")->required();
    loss->add_option("--gt", loss_args.gt, "Ground-truth label file")->required();
    loss->add_option("--lambda", loss_args.lambda, "Inner weight of qul or expmse");
    loss->add_option("--delta", loss_args.delta, "Margin of qul or o2");
    loss->add_option("--delta-conf", loss_args.delta_conf, "Confidence threshold of csdt or cssdf");
    loss->add_option("--gamma-clamp", loss_args.gamma_clamp, "Saturation of csdt distances");
    loss->add_option("--gamma-decay", loss_args.gamma_decay, "Boundary decay of cssdf");
    loss->add_option("--gamma-hat", loss_args.gamma_hat, "Clamp of cssdf signed distances");
    loss->add_option("--p", loss_args.p, "Exponent of cssdf (1 or 2)");
    loss->add_flag("--unsafe", loss_args.unsafe, "Allow hyperparameters outside the recommended ranges");
    loss->add_option("--grad", loss_args.grad, "Write the gradient w.r.t. the probabilities to this tensor file");

    DtArgs dt_args;
    auto* dt = app.add_subcommand("dt", "Distance transform of a class mask");
    dt->add_option("--labels", dt_args.labels, "Label file; the mask is pixels of --class");
    dt->add_option("--probs", dt_args.probs, "Probability tensor; the mask is p_class >= --delta-conf");
    dt->add_option("--class", dt_args.cls, "1-based class index")->required();
    dt->add_option("--delta-conf", dt_args.delta_conf, "Threshold for --probs");
    dt->add_flag("--signed", dt_args.is_signed, "Signed distance (positive inside)");
    dt->add_option("--cap", dt_args.cap, "Saturate (unsigned) or clamp (signed) at this distance");
    dt->add_option("--out", dt_args.out, "Write the field as an [H,W,1] tensor");

    std::string cmp_a, cmp_b;
    double cmp_rho = kDefaultRhoThreshold;
    auto* compare = app.add_subcommand("compare", "Interval criterion on two mean,std summaries (higher is better)");
    compare->add_option("--a", cmp_a, "\"mu,sigma\"")->required();
    compare->add_option("--b", cmp_b, "\"mu,sigma\"")->required();
    compare->add_option("--rho", cmp_rho, "Overlap threshold of condition (e)");

    GradArgs grad_args;
    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of a loss gradient on random inputs");
    gradcheck->add_option("--name", grad_args.name, "ce|qul|expmse|o2|csnp|csdt|cssdf")->required();
    gradcheck->add_option("--k", grad_args.spec.k_classes, "Class count");
    gradcheck->add_option("--size", grad_args.spec.height, "Grid side")->each([&](const std::string& s) {
        grad_args.spec.width = std::stoi(s);
    });
    gradcheck->add_option("--draws", grad_args.spec.draws, "Random draws");
    gradcheck->add_option("--seed", grad_args.spec.seed, "Seed");
    gradcheck->add_option("--step", grad_args.spec.step, "Finite-difference step");
    gradcheck->add_option("--tol", grad_args.spec.tol_rel, "Relative tolerance");
    gradcheck->add_flag("--with-ce", grad_args.spec.with_ce, "Check CE + lambda * loss");
    gradcheck->add_option("--lambda", grad_args.lambda, "Weight used with --with-ce");

    SynthArgs synth_args;
    auto* synth = app.add_subcommand("synth", "Generate one synthetic scene");
    synth->add_option("--geometry", synth_args.geometry, "concentric_rings|horizontal_bands|blob_layers");
    synth->add_option("--height", synth_args.spec.height);
    synth->add_option("--width", synth_args.spec.width);
    synth->add_option("--k", synth_args.spec.k_classes);
    synth->add_option("--sigma", synth_args.spec.noise_sigma, "Gaussian noise level");
    synth->add_option("--seed", synth_args.spec.seed);
    synth->add_option("--image", synth_args.image, "Write the image tensor here");
    synth->add_option("--labels", synth_args.labels, "Write the label file here");

    DemoArgs demo;
    auto* train_demo = app.add_subcommand("train-demo", "Cross-validated training on synthetic scenes");
    train_demo->add_option("--loss", demo.loss, "ce|qul|expmse|o2|csnp|csdt|cssdf");
    train_demo->add_option("--lambda", demo.lambda, "Weight of the ordinal term");
    train_demo->add_option("--delta", demo.delta, "Margin of qul or o2");
    train_demo->add_option("--delta-conf", demo.delta_conf);
    train_demo->add_option("--gamma-clamp", demo.gamma_clamp);
    train_demo->add_option("--gamma", demo.gamma_decay, "Boundary decay of cssdf");
    train_demo->add_option("--p", demo.p);
    train_demo->add_option("--scenes", demo.scenes, "Number of scenes (>= 10)");
    train_demo->add_option("--seed", demo.seed);
    train_demo->add_option("--out", demo.out, "Output directory");
    train_demo->add_option("--jobs", demo.jobs, "Parallel training runs");
    train_demo->add_flag("--baseline", demo.baseline, "Also train CE alone and compare");
    train_demo->add_option("--folds", demo.train.folds);
    train_demo->add_option("--epochs", demo.train.max_epochs);
    train_demo->add_option("--patience", demo.train.patience);
    train_demo->add_option("--lr", demo.train.learning_rate);
    train_demo->add_option("--batch", demo.train.batch_size);
    train_demo->add_option("--depth", demo.train.model.depth, "Pooling stages of the network");
    train_demo->add_option("--channels", demo.train.model.base_width, "Full-resolution channel count");
    train_demo->add_option("--geometry", demo.geometry);
    train_demo->add_option("--height", demo.scene.height);
    train_demo->add_option("--width", demo.scene.width);
    train_demo->add_option("--k", demo.scene.k_classes);
    train_demo->add_option("--sigma", demo.scene.noise_sigma);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitInput;
    }

    try {
        if (*eval) run_eval(eval_args);
        if (*loss) run_loss(loss_args);
        if (*dt) run_dt(dt_args);
        if (*compare) run_compare(cmp_a, cmp_b, cmp_rho);
        if (*gradcheck) return run_gradcheck(grad_args);
        if (*synth) run_synth(synth_args);
        if (*train_demo) run_train_demo(demo);
        return 0;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    } catch (const CLI::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInput;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitCompute;
    }
}
