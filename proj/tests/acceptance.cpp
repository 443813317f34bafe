// Acceptance checks 1-10. Prints one PASS/FAIL line per criterion and exits
// non-zero if any fails. Criteria 6, 7, 8 and 10 share one 4-mode x 5-seed
// training sweep on the default synthetic dataset (roughly 45 min on one core).

#include "dcl/ablation.hpp"
#include "dcl/checkpoint.hpp"
#include "dcl/clm.hpp"
#include "dcl/embedding.hpp"
#include "dcl/errors.hpp"
#include "dcl/gradcheck.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

using namespace dcl;
using ag::Mat;
using ag::Tape;
using ag::Var;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
    int id;
    std::string name;
    bool pass;
    std::string detail;
};

std::vector<Outcome> g_outcomes;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
    std::printf("%s %2d %s: %s\n", pass ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
    std::fflush(stdout);
    g_outcomes.push_back({id, name, pass, detail});
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<Var> constants(Tape& tape, const std::vector<Mat>& xs) {
    std::vector<Var> out;
    for (const Mat& x : xs) out.push_back(tape.constant(x));
    return out;
}

// 1 ---------------------------------------------------------------------------
void gradient_fidelity() {
    const std::clock_t c0 = std::clock();
    const gradcheck::Report r = gradcheck::run(Config::tiny());
    const double cpu = static_cast<double>(std::clock() - c0) / CLOCKS_PER_SEC;
    report(1, "gradient fidelity", r.passed && r.max_relative_error < 1e-4 && cpu < 60.0,
           fmt("max rel err %.2e over %zu scalars (worst %s), %.1f s CPU", r.max_relative_error, r.checked,
               r.worst_parameter.c_str(), cpu));
}

// 2 ---------------------------------------------------------------------------
void factorization() {
    const Config c;
    nn::ParameterStore store;
    Rng rng(21);
    dse::Dse model(store, c, rng);
    const ag::Index n = 16;
    const Mat s = rng.normal_matrix(n, c.d_s);
    std::vector<Mat> z;
    for (int t = 0; t < c.T; ++t) z.push_back(rng.normal_matrix(n, c.d_z));
    auto decode = [&](const std::vector<Mat>& zs) {
        Tape tape;
        std::vector<Mat> out;
        for (const Var& v : model.decode(tape, tape.constant(s), constants(tape, zs))) out.push_back(v.value());
        return out;
    };
    const auto base = decode(z);
    double off = 0.0;
    double on = std::numeric_limits<double>::infinity();
    for (int tp = 0; tp < c.T; ++tp) {
        auto zp = z;
        zp[static_cast<size_t>(tp)] += rng.normal_matrix(n, c.d_z);
        const auto moved = decode(zp);
        for (int t = 0; t < c.T; ++t) {
            const double d = (moved[static_cast<size_t>(t)] - base[static_cast<size_t>(t)]).cwiseAbs().maxCoeff();
            if (t == tp) {
                on = std::min(on, d);
            } else {
                off = std::max(off, d);
            }
        }
    }
    report(2, "DSE factorization", off == 0.0 && on > 0.0,
           fmt("max |change of x_hat_t| from z_t' (t' != t) = %.1e; min own-step change %.2e", off, on));
}

// 3 ---------------------------------------------------------------------------
void kl_and_contrastive() {
    Config c = Config::tiny();
    int kl_bad = 0;
    int nce_bad = 0;
    const int trials = 1000;
    for (int trial = 0; trial < trials; ++trial) {
        nn::ParameterStore store;
        Rng rng(derive_seed(31, static_cast<uint64_t>(trial)));
        dse::Dse model(store, c, rng);
        for (ag::Parameter* p : store.all()) p->value = rng.normal_matrix(p->value.rows(), p->value.cols()) * 0.5;
        const ag::Index n = 2 + static_cast<ag::Index>(rng.below(7));
        std::vector<Mat> x;
        for (int t = 0; t < c.T; ++t) x.push_back(rng.normal_matrix(n, c.d) * 2.0);
        const dse::DseNoise noise = dse::DseNoise::draw(c, n, rng);
        Tape tape;
        const auto out = model.loss(tape, constants(tape, x), noise, dse::LossWeights::from(c));
        const auto& b = out.breakdown;
        if (!(b.kl_s >= 0.0) || !(b.kl_z >= 0.0)) ++kl_bad;
        if (!(b.mi_z_x < 0.0) || !(b.mi_s_x < 0.0) || !(b.mi_z_s < 0.0)) ++nce_bad;

        Eigen::VectorXd a = rng.normal_matrix(5, 1), pos = rng.normal_matrix(5, 1);
        std::vector<Eigen::VectorXd> negs;
        for (int j = 0; j < 1 + trial % 9; ++j) negs.push_back(rng.normal_matrix(5, 1));
        if (!(dse::contrastive_term(a, pos, negs, c.tau_nce) < 0.0)) ++nce_bad;
    }
    double sym = 0.0;
    Eigen::VectorXd v = Eigen::VectorXd::LinSpaced(6, -1.0, 1.5);
    for (int n = 1; n <= 16; ++n) {
        std::vector<Eigen::VectorXd> negs(static_cast<size_t>(n), v);
        sym = std::max(sym, std::abs(dse::contrastive_term(v, v, negs, 0.5) - std::log(1.0 / (n + 1))));
    }
    report(3, "KL and contrastive invariants", kl_bad == 0 && nce_bad == 0 && sym < 1e-9,
           fmt("%d trials: %d KL violations, %d contrastive violations; symmetric case err %.1e", trials, kl_bad,
               nce_bad, sym));
}

// 4 ---------------------------------------------------------------------------
Mat permute_rows(const Mat& x, const std::vector<ag::Index>& perm) {
    Mat out(x.rows(), x.cols());
    for (ag::Index i = 0; i < x.rows(); ++i) out.row(i) = x.row(perm[static_cast<size_t>(i)]);
    return out;
}

void affinity_suite() {
    const Config c;
    Rng rng(41);
    int bad_sum = 0, bad_nnz = 0, bad_scale = 0, bad_perm = 0;
    const int trials = 1000;
    for (int trial = 0; trial < trials; ++trial) {
        const auto n = static_cast<ag::Index>(2 + rng.below(40));
        const Mat audio = rng.normal_matrix(n, 16);
        const Mat stat = rng.normal_matrix(n, 8);
        const Mat dyn = rng.normal_matrix(n, 8);
        const int k = c.k;
        const int kk = std::min<int>(k, static_cast<int>(n));
        const Mat aa = clm::build_affinity(audio, c.tau_aff, k);
        const Mat as = clm::build_affinity(stat, c.tau_aff, k);
        const Mat az = clm::build_affinity(dyn, c.tau_aff, k);
        for (const Mat* a : {&aa, &as, &az}) {
            for (ag::Index i = 0; i < n; ++i) {
                if (std::abs(a->row(i).sum() - 1.0) > 1e-6) ++bad_sum;
                if ((a->row(i).array() != 0.0).count() > kk) ++bad_nnz;
            }
        }
        Eigen::VectorXd scale(n);
        for (ag::Index i = 0; i < n; ++i) scale(i) = std::exp(rng.uniform(-4.0, 4.0));
        if ((clm::build_affinity(scale.asDiagonal() * audio, c.tau_aff, k) - aa).cwiseAbs().maxCoeff() > 1e-12) {
            ++bad_scale;
        }
        std::vector<ag::Index> perm(static_cast<size_t>(n));
        std::iota(perm.begin(), perm.end(), ag::Index{0});
        std::shuffle(perm.begin(), perm.end(), rng.engine());
        const Mat f = clm::transfer(aa, as, az, audio, stat, dyn);
        const Mat pa = permute_rows(audio, perm), ps = permute_rows(stat, perm), pz = permute_rows(dyn, perm);
        const Mat fp = clm::transfer(clm::build_affinity(pa, c.tau_aff, k), clm::build_affinity(ps, c.tau_aff, k),
                                     clm::build_affinity(pz, c.tau_aff, k), pa, ps, pz);
        if (fp != permute_rows(f, perm)) ++bad_perm;
    }
    report(4, "affinity suite", bad_sum + bad_nnz + bad_scale + bad_perm == 0,
           fmt("%d batches (k=%d): row-sum %d, nnz %d, rescale %d, permutation %d violations", trials, c.k, bad_sum,
               bad_nnz, bad_scale, bad_perm));
}

// 5 ---------------------------------------------------------------------------
void tie_identity(const synth::DatasetSplit& ds) {
    Config c;
    c.mode = Mode::DseAC;
    fusion::Model m(c, fusion::DataShape::of(ds, c));
    std::vector<size_t> idx(static_cast<size_t>(c.batch));
    std::iota(idx.begin(), idx.end(), size_t{0});
    const fusion::Batch b = fusion::make_batch(ds, ds.train, idx);
    fusion::init_intervention(m, b);
    Rng rng(51);
    fusion::ForwardNoise noise = fusion::ForwardNoise::draw(m, 2 * b.pairs(), c.cf_samples_eval, rng, true);
    for (Mat& cf : noise.counterfactual) cf.setZero();
    fusion::ForwardOptions opt;
    opt.identity_intervention = true;
    Tape tape;
    const auto r = fusion::forward(tape, m, b, noise, opt);
    const Mat& tie = r.tie->value();
    const double scale = std::max(1.0, r.logits.value().cwiseAbs().maxCoeff());
    const double tie_max = tie.cwiseAbs().maxCoeff();
    double loss_err = 0.0;
    for (ag::Index i = 0; i < tie.rows(); ++i) {
        const double lse = std::log(std::exp(tie(i, 0)) + std::exp(tie(i, 1)));
        const double li = lse - tie(i, b.labels[static_cast<size_t>(i)]);
        loss_err = std::max(loss_err, std::abs(li - std::log(2.0)));
    }
    const double eps = std::numeric_limits<double>::epsilon();
    report(5, "TIE identity", tie_max <= 8 * eps * scale && loss_err <= 2 * eps && std::abs(r.ce_value - std::log(2.0)) <= 2 * eps,
           fmt("max |Y_TIE| = %.1e (logit scale %.2f), max |L_TIE - ln 2| = %.1e over %d samples", tie_max, scale,
               loss_err, b.pairs()));
}

// 9 ---------------------------------------------------------------------------
void determinism(const synth::DatasetSplit& ds, const fs::path& work) {
    Config c;
    c.epochs = 2;
    const fs::path dir = work / "determinism";
    fs::create_directories(dir);
    fusion::FitOptions o1, o2;
    o1.metrics_path = (dir / "metrics_a.jsonl").string();
    o2.metrics_path = (dir / "metrics_b.jsonl").string();
    const auto r1 = fusion::fit(ds, c, o1);
    const auto r2 = fusion::fit(ds, c, o2);
    const bool logs_same = slurp(dir / "metrics_a.jsonl") == slurp(dir / "metrics_b.jsonl");

    const std::string ck = (dir / "model.dclc").string();
    checkpoint::save(*r1.model, ck);
    const auto loaded = checkpoint::load(ck);
    const std::string before = fusion::to_json(fusion::evaluate(*r1.model, ds, fusion::Split::Test)).dump();
    const std::string after = fusion::to_json(fusion::evaluate(*loaded, ds, fusion::Split::Test)).dump();

    const fs::path d1 = dir / "data_a";
    const fs::path d2 = dir / "data_b";
    fs::remove_all(d1);
    fs::remove_all(d2);
    synth::write_dataset(ds, d1.string());
    const synth::DatasetSplit back = synth::read_dataset(d1.string());
    synth::write_dataset(back, d2.string());
    bool files_same = back == ds;
    for (const auto& e : fs::directory_iterator(d1)) {
        files_same = files_same && slurp(e.path()) == slurp(d2 / e.path().filename());
    }
    report(9, "determinism and persistence", logs_same && before == after && files_same,
           fmt("metric logs %s, checkpoint eval %s, dataset round-trip %s", logs_same ? "identical" : "DIFFER",
               before == after ? "identical" : "DIFFERS", files_same ? "bit-exact" : "DIFFERS"));
}

// 6, 7, 8, 10 -----------------------------------------------------------------
struct Sweep {
    std::vector<ablation::Run> runs;
    std::map<std::pair<Mode, uint64_t>, double> seconds;
    std::map<uint64_t, embedding::Projection> projections;  // dse_a_c only
};

Sweep sweep(const synth::DatasetSplit& ds, const std::vector<uint64_t>& seeds) {
    Sweep s;
    const Config base;
    auto last = Clock::now();
    s.runs = ablation::run(ds, base, ablation::kAllModes, seeds, [&](const ablation::Run& r, const fusion::Model& m) {
        s.seconds[{r.mode, r.seed}] = seconds_since(last);
        if (r.mode == Mode::DseAC) s.projections[r.seed] = embedding::project_dynamic(m, ds);
        std::printf("  trained %-8s seed %llu: test %.3f material %.3f probes %.3f / %.3f (%.0f s)\n",
                    to_string(r.mode).c_str(), static_cast<unsigned long long>(r.seed), r.test.accuracy_all,
                    r.test.accuracy_material, r.test.probe_static.value_or(NAN), r.test.probe_dynamic.value_or(NAN),
                    s.seconds[{r.mode, r.seed}]);
        std::fflush(stdout);
        last = Clock::now();
    });
    return s;
}

void training_sanity(const Sweep& s, uint64_t seed) {
    for (const auto& r : s.runs) {
        if (r.mode != Mode::DseAC || r.seed != seed) continue;
        const double first = r.history.front().dse.recon;
        const double final_recon = r.history.back().dse.recon;
        const double secs = s.seconds.at({r.mode, r.seed});
        const int epochs = r.history.back().epoch;
        report(6, "training sanity", epochs == 20 && final_recon < 0.5 * first && secs < 600.0,
               fmt("recon %.1f -> %.1f after %d epochs (ratio %.3f), %.0f s", first, final_recon, epochs,
                   final_recon / first, secs));
        return;
    }
    report(6, "training sanity", false, "no dse_a_c run");
}

void disentanglement(const std::vector<ablation::Summary>& summary) {
    std::string detail;
    bool pass = false;
    for (const auto& s : summary) {
        if (!s.probe_static_mean || !s.probe_dynamic_mean) continue;
        const double gap = *s.probe_static_mean - *s.probe_dynamic_mean;
        detail += fmt("%s%s static %.3f dynamic %.3f gap %+.3f", detail.empty() ? "" : "; ", to_string(s.mode).c_str(),
                      *s.probe_static_mean, *s.probe_dynamic_mean, gap);
        if (s.mode == Mode::DseAC) pass = gap >= 0.05;
    }
    report(7, "disentanglement direction", pass, detail);
}

void dcl_improvement(const std::vector<ablation::Summary>& summary) {
    std::map<Mode, double> acc;
    for (const auto& s : summary) acc[s.mode] = s.overall_mean;
    const double gain = acc[Mode::DseAC] - acc[Mode::Baseline];
    bool ordered = true;
    const Mode chain[] = {Mode::Baseline, Mode::Dse, Mode::DseA, Mode::DseAC};
    std::string detail;
    for (int i = 0; i < 4; ++i) {
        detail += fmt("%s%s %.1f", i ? " / " : "", to_string(chain[i]).c_str(), 100 * acc[chain[i]]);
        if (i > 0 && acc[chain[i - 1]] - acc[chain[i]] > 0.01) ordered = false;
    }
    report(8, "DCL improvement direction", gain >= 0.02 && ordered,
           fmt("gain %+.1f points; ", 100 * gain) + detail + (ordered ? "" : " (inversion > 1 point)"));
}

void embedding_viz(const Sweep& s, uint64_t seed) {
    const auto it = s.projections.find(seed);
    if (it == s.projections.end()) {
        report(10, "embedding visualization", false, "no dse_a_c model");
        return;
    }
    const auto& p = it->second;
    const double gap = p.silhouette_motion - p.silhouette_shuffled;
    report(10, "embedding visualization", gap >= 0.1,
           fmt("silhouette by motion %.3f vs shuffled %.3f (gap %.3f, %ld points)", p.silhouette_motion,
               p.silhouette_shuffled, gap, static_cast<long>(p.xy.rows())));
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance checks"};
    std::string work = "acceptance_work";
    int seeds = 5;
    app.add_option("--work", work, "Scratch directory");
    app.add_option("--seeds", seeds, "Seeds per mode for the training sweep");
    CLI11_PARSE(app, argc, argv);
    setenv("DCL_THREADS", "1", 1);
    fs::create_directories(work);
    const auto start = Clock::now();

    try {
        gradient_fidelity();
        factorization();
        kl_and_contrastive();
        affinity_suite();
        const Config c;
        const synth::DatasetSplit ds = synth::generate_dataset(c, c.seed);
        tie_identity(ds);
        determinism(ds, work);

        std::vector<uint64_t> seed_list(static_cast<size_t>(seeds));
        std::iota(seed_list.begin(), seed_list.end(), uint64_t{1});
        const Sweep s = sweep(ds, seed_list);
        const auto summary = ablation::summarize(s.runs);
        std::printf("\n%s\n", ablation::format_table(summary).c_str());
        training_sanity(s, seed_list.front());
        disentanglement(summary);
        dcl_improvement(summary);
        embedding_viz(s, seed_list.front());
        std::ofstream(fs::path(work) / "ablation.json") << ablation::to_json(s.runs, summary).dump(2);
    } catch (const std::exception& e) {
        std::printf("FAIL: aborted: %s\n", e.what());
        return 1;
    }

    std::sort(g_outcomes.begin(), g_outcomes.end(), [](const Outcome& a, const Outcome& b) { return a.id < b.id; });
    nlohmann::json j = nlohmann::json::array();
    int failed = 0;
    for (const auto& o : g_outcomes) {
        j.push_back({{"criterion", o.id}, {"name", o.name}, {"pass", o.pass}, {"detail", o.detail}});
        failed += !o.pass;
    }
    std::ofstream(fs::path(work) / "acceptance.json") << j.dump(2);
    std::printf("\n%d/%zu criteria passed in %.0f s\n", static_cast<int>(g_outcomes.size()) - failed, g_outcomes.size(),
                seconds_since(start));
    return failed == 0 ? 0 : 1;
}
