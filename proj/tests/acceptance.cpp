// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "seghgnn/seghgnn.hpp"
#include "support/oracle.hpp"
#include "support/synthetic.hpp"

using namespace seghgnn;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

// Tolerances and budgets
constexpr int kManifoldTrials = 1000;
constexpr double kConstraintTol = 1e-8;
constexpr double kInverseTol = 1e-6;
constexpr double kMaxTangentNorm = 5.0;
constexpr double kMaxPointDistance = 5.0;
constexpr double kRoundTripTol = 1e-9;
constexpr double kFactorTol = 1e-9;
constexpr double kManifoldSeconds = 1.0;

constexpr int kStiefelSteps = 10000;
constexpr double kStiefelLr = 0.1;
constexpr double kOrthoTol = 1e-6;
constexpr int kTransformPairs = 100;

constexpr int kGradInstances = 20;
constexpr double kFdStep = 1e-5;
constexpr double kGradTol = 1e-4;
constexpr double kKinkMargin = 1e-3;

constexpr double kLossTol = 1e-9;

constexpr int kOracleGraphs = 20;
constexpr int kOracleSeeds = 5;
constexpr double kCrossMax = 0.05;
constexpr double kOracleSlack = 0.10;

constexpr int kRecoverySeeds = 5;
constexpr double kLowDimAri = 0.9;

constexpr std::size_t kStiefelBudget = 256;
constexpr std::size_t kTotalBudget = 7500;

constexpr Eigen::Index kThroughputSide = 60;
constexpr double kThroughputSeconds = 30.0;

int failures = 0;

void report(bool ok, const std::string& name, const std::string& detail) {
    std::printf("%s  %-28s %s\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
}

std::string fmt(const char* f, double a) {
    char buf[128];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

/// Runs a criterion, turning an escaped exception into a FAIL line.
void criterion(const std::string& name, const std::function<void()>& body) {
    try {
        body();
    } catch (const std::exception& e) {
        report(false, name, std::string("exception: ") + e.what());
    }
}

// ---------------------------------------------------------------------------

void manifold_suite() {
    namespace m = manifold;
    std::mt19937_64 rng(1);
    std::normal_distribution<double> nd;
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    auto unit = [&](Eigen::Index n) {
        Vector v(n);
        for (auto& x : v) x = nd(rng);
        return Vector(v.normalized());
    };
    double worst_constraint = 0, worst_inv1 = 0, worst_inv2 = 0, worst_rt = 0, worst_gamma = 0;
    const auto t0 = Clock::now();
    for (int t = 0; t < kManifoldTrials; ++t) {
        const Eigen::Index n = 2 + t % 15;
        auto point = [&]() {
            const double r = kMaxPointDistance * ud(rng);
            Vector c(n + 1);
            c[0] = std::cosh(r);
            c.tail(n) = std::sinh(r) * unit(n);
            return m::LorentzPoint::reproject(c);
        };
        const auto x = point();
        const auto y = point();
        Vector amb(n + 1);
        for (auto& a : amb) a = nd(rng);
        const auto dir = m::TangentVector::project(x, amb);
        const Vector v = dir.vec() * (kMaxTangentNorm * ud(rng) / m::lorentz_norm(dir));
        const auto tv = m::TangentVector::at(x, v);

        const auto ex = m::exp_map(x, tv);
        for (const auto* p : {&x, &y, &ex}) {
            worst_constraint = std::max(worst_constraint, std::abs(m::lorentz_inner(*p, *p) + 1.0));
        }
        worst_inv1 = std::max(worst_inv1, (m::log_map(x, ex).vec() - v).norm() / std::max(v.norm(), 1e-300));
        worst_inv2 = std::max(worst_inv2, (m::exp_map(x, m::log_map(x, y)).coords() - y.coords()).norm() / y.coords().norm());
        worst_rt = std::max(worst_rt, (m::from_poincare(m::to_poincare(x)).coords() - x.coords()).cwiseAbs().maxCoeff());
        worst_rt = std::max(worst_rt, (m::from_klein(m::to_klein(x)).coords() - x.coords()).cwiseAbs().maxCoeff());
        worst_gamma = std::max(worst_gamma, std::abs(m::lorentz_factor(m::to_klein(x)) - x.time()));
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    const bool ok = worst_constraint < kConstraintTol && worst_inv1 < kInverseTol && worst_inv2 < kInverseTol &&
                    worst_rt < kRoundTripTol && worst_gamma < kFactorTol && secs < kManifoldSeconds;
    std::ostringstream d;
    d << kManifoldTrials << " trials: constraint " << worst_constraint << ", log(exp) " << worst_inv1 << ", exp(log) "
      << worst_inv2 << ", roundtrip " << worst_rt << ", gamma " << worst_gamma << ", " << secs << " s";
    report(ok, "manifold-suite", d.str());
}

void stiefel_suite() {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> ud(-1.0, 1.0);
    auto w = stiefel::init_stiefel(16, 0);
    Matrix g(16, 16);
    for (int t = 0; t < kStiefelSteps; ++t) {
        for (auto& x : g.reshaped()) x = ud(rng);
        w = stiefel::rsgd_step(w, g, kStiefelLr);
    }
    const double ortho = stiefel::orthonormality_error(w.mat());

    double worst = 0.0;
    std::normal_distribution<double> nd(0.0, 2.0);
    for (int t = 0; t < kTransformPairs; ++t) {
        const stiefel::LorentzTransform tr(stiefel::init_stiefel(16, rng()));
        Vector s(16);
        for (auto& x : s) x = nd(rng);
        const auto x = manifold::LorentzPoint::reproject((Vector(17) << 0.0, s).finished());
        const auto y = stiefel::apply_lorentz_linear(tr, x);
        worst = std::max(worst, std::abs(manifold::lorentz_inner(y, y) + 1.0));
    }
    std::ostringstream d;
    d << kStiefelSteps << " rsgd steps: |W'W-I|_F " << ortho << "; transform constraint " << worst;
    report(ortho < kOrthoTol && worst < kConstraintTol, "stiefel-suite", d.str());
}

void gradient_check() {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> nd(0.0, 1.5);
    double worst = 0.0;
    int skipped = 0;
    for (int t = 0; t < kGradInstances;) {
        const Eigen::Index n = 3 + static_cast<Eigen::Index>(rng() % 8);
        const Eigen::Index d = 1 + static_cast<Eigen::Index>(rng() % 4);
        Matrix f(n, d);
        for (auto& x : f.reshaped()) x = nd(rng);
        const Matrix w = hgnn::build_edge_weights(f);
        const auto p = hgnn::ModelParams::init(d, 32, 2, rng());
        const Matrix lifted = manifold::lift_features_matrix(f, 3.0);
        // A central difference straddling a relu kink measures nothing; redraw.
        const auto c = hgnn::forward(p, lifted, w, manifold::Aggregation::literal);
        if (c.z1.cwiseAbs().minCoeff() < kKinkMargin || c.ball.cwiseAbs().minCoeff() < kKinkMargin) {
            ++skipped;
            continue;
        }
        const auto lg = hgnn::loss_gradients(p, lifted, w);
        const auto pts = manifold::lift_features(f, 3.0);
        const auto flat = testsupport::FlatModel::from(p);
        const Vector fd = testsupport::central_difference(
            [&](const Vector& th) { return flat.loss(th, pts, w, manifold::Aggregation::literal); }, flat.theta, kFdStep);
        worst = std::max(worst, testsupport::relative_error(testsupport::FlatModel::flatten(lg.grads), fd));
        ++t;
    }
    report(worst < kGradTol, "gradient-check",
           std::to_string(kGradInstances) + " instances (" + std::to_string(skipped) +
               " draws near a relu kink redrawn), worst relative error " + fmt("%.3g", worst));
}

void loss_values() {
    const double closed = -1.0 + std::sqrt(2.0 - std::numbers::sqrt2);
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    Matrix w(9, 9);
    for (int i = 0; i < 9; ++i) {
        for (int j = i; j < 9; ++j) w(i, j) = w(j, i) = ud(rng);
    }
    const double uniform = hgnn::ncut_loss(hgnn::ClusterAssignment::from_matrix(Matrix::Constant(9, 2, 0.5)), w);

    Matrix two = Matrix::Zero(8, 8);
    two.topLeftCorner(4, 4).setConstant(0.5);
    two.bottomRightCorner(4, 4).setConstant(0.25);
    Matrix s = Matrix::Zero(8, 2);
    s.topRows(4).col(0).setOnes();
    s.bottomRows(4).col(1).setOnes();
    const double hard = hgnn::ncut_loss(hgnn::ClusterAssignment::from_matrix(s), two);
    const bool ok = std::abs(uniform - closed) < kLossTol && std::abs(hard + 1.0) < kLossTol;
    report(ok, "loss-values",
           "uniform " + fmt("%.12f", uniform) + " (closed form " + fmt("%.12f", closed) + "), balanced hard " +
               fmt("%.12f", hard));
}

void oracle_equivalence() {
    int passed = 0, total = 0;
    double worst_ratio = 0.0;
    for (int g = 0; g < kOracleGraphs; ++g) {
        const Eigen::Index n = 6 + g % 7;
        const Eigen::Index n0 = n / 2 - (g % 3 == 0 ? 1 : 0);
        const auto planted = testsupport::two_block_weights(n, n0, kCrossMax, 500 + static_cast<std::uint64_t>(g));
        const Matrix f = testsupport::block_features(planted.truth, 4, static_cast<std::uint64_t>(g));
        const auto graph = hgnn::PatchGraph::with_weights(f, planted.w, 1, n);
        const auto exact = metrics::exact_ncut(planted.w);
        for (int s = 0; s < kOracleSeeds; ++s) {
            pipeline::TttConfig cfg;
            cfg.seed = static_cast<std::uint64_t>(s);
            const auto labels = pipeline::harden(pipeline::ttt_fit(graph, cfg).assignment);
            ++total;
            const bool both = std::count(labels.begin(), labels.end(), 1) > 0 &&
                              std::count(labels.begin(), labels.end(), 0) > 0;
            if (!both) {
                worst_ratio = std::numeric_limits<double>::infinity();
                continue;
            }
            const double v = metrics::ncut_value(planted.w, labels);
            const double ratio = exact.ncut_value > 0 ? v / exact.ncut_value : (v == 0 ? 1.0 : INFINITY);
            worst_ratio = std::max(worst_ratio, ratio);
            if (v <= (1.0 + kOracleSlack) * exact.ncut_value) ++passed;
        }
    }
    report(passed == total, "oracle-equivalence",
           std::to_string(passed) + "/" + std::to_string(total) + " fits within 10% of the exact optimum, worst ratio " +
               fmt("%.4f", worst_ratio));
}

std::vector<double> recovery_aris(Eigen::Index dim) {
    std::vector<double> aris;
    for (int s = 0; s < kRecoverySeeds; ++s) {
        const auto inst = testsupport::two_halves(8, 8, 16, 100 + static_cast<std::uint64_t>(s));
        pipeline::TttConfig cfg;
        cfg.dim = dim;
        cfg.seed = static_cast<std::uint64_t>(s);
        aris.push_back(metrics::ari(pipeline::harden(pipeline::ttt_fit(inst.graph(), cfg).assignment), inst.truth));
    }
    return aris;
}

std::string join(const std::vector<double>& v) {
    std::string out;
    for (double x : v) out += (out.empty() ? "" : " ") + fmt("%.3f", x);
    return out;
}

void planted_recovery() {
    const auto aris = recovery_aris(16);
    bool ok = std::all_of(aris.begin(), aris.end(), [](double a) { return a == 1.0; });

    std::vector<double> part_aris;
    for (int s = 0; s < kRecoverySeeds; ++s) {
        const auto inst = testsupport::four_part_object(50 + static_cast<std::uint64_t>(s));
        pipeline::PartConfig pc;
        pc.base.seed = static_cast<std::uint64_t>(s);
        part_aris.push_back(metrics::ari(pipeline::part_segmentation(inst.graph(), pc).parts.labels, inst.truth));
    }
    ok = ok && std::all_of(part_aris.begin(), part_aris.end(), [](double a) { return a == 1.0; });
    report(ok, "planted-recovery", "halves ARI [" + join(aris) + "], parts ARI [" + join(part_aris) + "]");
}

void parameter_budget() {
    const auto p = hgnn::ModelParams::init(16, 32, 4, 0);
    const bool ok = p.stiefel_parameter_count() == kStiefelBudget && p.parameter_count() <= kTotalBudget;
    report(ok, "parameter-budget",
           "stiefel " + std::to_string(p.stiefel_parameter_count()) + ", total " + std::to_string(p.parameter_count()));
}

void low_dimension() {
    const auto aris = recovery_aris(2);
    const bool ok = std::all_of(aris.begin(), aris.end(), [](double a) { return a >= kLowDimAri; });
    report(ok, "low-dimension-d2", "ARI [" + join(aris) + "]");
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

int run_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "seghgnn");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    return cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
}

void determinism() {
    const fs::path dir = fs::temp_directory_path() / "seghgnn_acceptance";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const auto blob = testsupport::centered_blob(8, 8, 2, 5, 2, 5, 16, 9);
    io::write_features(dir / "blob.sghn", io::FeatureFile{blob.features, 8, 8, 8});
    const auto parts = testsupport::four_part_object(9);
    io::write_features(dir / "parts.sghn", io::FeatureFile{parts.features, 8, 8, 8});
    int codes = 0;
    for (const std::string run : {"1", "2"}) {
        codes += run_cli({"localize", "--features", (dir / "blob.sghn").string(), "--seed", "3", "--out",
                          (dir / ("mask" + run + ".pgm")).string(), "--boxes-out", (dir / ("boxes" + run + ".json")).string()});
        codes += run_cli({"parts", "--features", (dir / "parts.sghn").string(), "--seed", "3", "--out",
                          (dir / ("parts" + run + ".pgm")).string()});
    }
    bool same = codes == 0;
    for (const char* stem : {"mask", "boxes", "parts"}) {
        const std::string ext = std::string(stem) == "boxes" ? ".json" : ".pgm";
        const auto a = slurp(dir / (stem + std::string("1") + ext));
        const auto b = slurp(dir / (stem + std::string("2") + ext));
        same = same && !a.empty() && a == b;
        if (ext == ".pgm") same = same && slurp(dir / (stem + std::string("1") + ext + ".json")) ==
                                               slurp(dir / (stem + std::string("2") + ext + ".json"));
    }
    fs::remove_all(dir);
    report(same, "determinism", same ? "masks, sidecars and box files byte-identical across runs"
                                     : "outputs differ or a run failed");
}

void throughput() {
    std::mt19937_64 rng(6);
    const Eigen::Index n = kThroughputSide * kThroughputSide;
    // Raw width of ViT-S keys.
    Matrix f = testsupport::gaussian(n, 384, 1.0, rng);
    for (Eigen::Index r = 0; r < kThroughputSide; ++r) {
        for (Eigen::Index c = 0; c < kThroughputSide; ++c) {
            const bool inside = r > 15 && r < 45 && c > 15 && c < 45;
            f(r * kThroughputSide + c, 0) += inside ? 6.0 : -6.0;
        }
    }
    const auto t0 = Clock::now();
    const auto graph = hgnn::PatchGraph::from_features(f, kThroughputSide, kThroughputSide);
    pipeline::TttConfig cfg;
    const auto r = pipeline::ttt_fit(graph, cfg);
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    report(secs < kThroughputSeconds && r.losses.size() == 10u, "throughput-3600",
           std::to_string(n) + " nodes, d=16, 10 epochs (graph build included): " + fmt("%.2f", secs) + " s");
}

} // namespace

int main() {
    criterion("manifold-suite", manifold_suite);
    criterion("stiefel-suite", stiefel_suite);
    criterion("gradient-check", gradient_check);
    criterion("loss-values", loss_values);
    criterion("oracle-equivalence", oracle_equivalence);
    criterion("planted-recovery", planted_recovery);
    criterion("parameter-budget", parameter_budget);
    criterion("low-dimension-d2", low_dimension);
    criterion("determinism", determinism);
    criterion("throughput-3600", throughput);
    std::printf("%s: %d criteria failed\n", failures == 0 ? "ACCEPTED" : "REJECTED", failures);
    return failures == 0 ? 0 : 1;
}
