// Acceptance harness: one PASS/FAIL line per criterion, detail lines indented.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iterator>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "mhsa/attention_io.hpp"
#include "mhsa/checkpoint.hpp"
#include "mhsa/config.hpp"
#include "mhsa/errors.hpp"
#include "mhsa/eval.hpp"
#include "mhsa/experiment.hpp"
#include "mhsa/losses.hpp"
#include "mhsa/train.hpp"
#include "mhsa/verification.hpp"
#include "test_util.hpp"

using namespace mhsa;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct Outcome {
  bool pass = true;
  std::vector<std::string> details;

  void require(bool ok, const std::string& what) {
    if (!ok) pass = false;
    details.push_back(std::string(ok ? "ok    " : "FAIL  ") + what);
  }
  void note(const std::string& what) { details.push_back("      " + what); }
};

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

constexpr std::uint64_t kSeeds[] = {1, 2, 3, 4, 5};

// ---------------------------------------------------------------------------

Outcome ac1() {
  Outcome o;
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::size_t components = 0;
  for (std::uint64_t seed : kSeeds) {
    const auto results = run_gradcheck_suite(seed);
    components = results.size();
    for (const auto& r : results) {
      worst = std::max(worst, r.max_rel_error);
      if (!r.passed) o.require(false, fmt("seed %llu: %s rel err %.3e", static_cast<unsigned long long>(seed),
                                          r.component.c_str(), r.max_rel_error));
    }
  }
  const double secs = seconds_since(t0);
  o.require(worst < 1e-4, fmt("%zu components x 5 seeds, max relative error %.3e < 1e-4", components, worst));
  o.require(secs < 60.0, fmt("runtime %.1f s < 60 s", secs));
  return o;
}

Outcome ac2() {
  Outcome o;
  Rng rng(2024);
  double worst = 0.0, worst_k1 = 0.0;
  int k1_cases = 0;
  for (int t = 0; t < 50; ++t) {
    const std::size_t b = std::size_t{4} + 2 * static_cast<std::size_t>(t % 3);
    const std::size_t k = 1 + static_cast<std::size_t>((t / 3) % 3);
    std::vector<int> y = testutil::pk_labels(b / 2, 2);
    std::shuffle(y.begin(), y.end(), rng);
    std::vector<Tensor> heads;
    for (std::size_t i = 0; i < b; ++i) heads.push_back(gaussian({k, 5}, 1.0, rng));
    ad::Tape tape;
    std::vector<ad::Var> vars;
    std::vector<oracle::Mat> mats;
    for (const auto& h : heads) {
      vars.push_back(tape.constant(h));
      mats.push_back(testutil::to_mat(h));
    }
    const double v = ihtl(vars, y, 3.0).value().item();
    worst = std::max(worst, std::abs(v - oracle::ihtl(mats, y, 3.0)));
    if (k == 1) {
      Tensor f({b, 5});
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t d = 0; d < 5; ++d) f(i, d) = heads[i](0, d);
      worst_k1 = std::max(worst_k1, std::abs(v - hard_triplet(tape.constant(f), y, 3.0).value().item()));
      ++k1_cases;
    }
  }
  o.require(worst <= 1e-10, fmt("50 batches (B in {4,6,8}, K in {1,2,3}): max |ihtl - brute force| = %.2e", worst));
  o.require(worst_k1 <= 1e-12, fmt("%d K=1 batches: max |ihtl - hard_triplet| = %.2e", k1_cases, worst_k1));
  return o;
}

Outcome ac3() {
  Outcome o;
  Rng rng(3033);
  std::uniform_int_distribution<int> nq(1, 10), ng(1, 30), cam(0, 2);
  std::normal_distribution<double> g;
  double worst = 0.0;
  int compared = 0;
  for (int t = 0; t < 50; ++t) {
    const int ids = 2 + t % 5;
    std::uniform_int_distribution<int> id(0, ids - 1);
    auto draw = [&](int n) {
      std::vector<EmbeddingRecord> out(static_cast<std::size_t>(n));
      for (auto& r : out) {
        r.id = id(rng);
        r.cam = cam(rng);
        r.feature.resize(4);
        for (double& v : r.feature) v = g(rng);
      }
      return out;
    };
    const auto q = draw(nq(rng));
    const auto gal = draw(ng(rng));
    std::vector<oracle::Record> oq, og;
    for (const auto& r : q) oq.push_back({r.id, r.cam, r.feature});
    for (const auto& r : gal) og.push_back({r.id, r.cam, r.feature});
    const oracle::Report ref = oracle::evaluate(oq, og);
    if (ref.valid == 0) {
      bool threw = false;
      try {
        cmc_map(q, gal);
      } catch (const DataError&) {
        threw = true;
      }
      o.require(threw, fmt("set %d: no valid queries raises an evaluation error", t));
      continue;
    }
    const EvalReport r = cmc_map(q, gal);
    if (r.valid_queries != ref.valid) o.require(false, fmt("set %d: valid query count differs", t));
    worst = std::max(worst, std::abs(r.mAP - ref.map));
    for (std::size_t k = 0; k < gal.size(); ++k) worst = std::max(worst, std::abs(r.cmc[k] - ref.cmc[k]));
    ++compared;
  }
  o.require(worst <= 1e-12, fmt("%d random sets: max CMC/mAP deviation from brute force %.2e", compared, worst));
  const std::uint8_t rel[] = {1, 0, 1};
  const double ap = average_precision(rel);
  o.require(ap == 5.0 / 6.0, fmt("AP with hits at ranks 1 and 3 = %.17g (5/6)", ap));
  return o;
}

Outcome ac4() {
  Outcome o;
  Rng rng(44);
  double worst_orth = 0.0, worst_scale = 0.0;
  for (int t = 0; t < 20; ++t) {
    const std::size_t k = 2 + static_cast<std::size_t>(t % 4), d = 8;
    // Gram-Schmidt on random rows.
    Tensor p = gaussian({k, d}, 1.0, rng);
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 0; j < i; ++j) {
        double dot = 0.0;
        for (std::size_t c = 0; c < d; ++c) dot += p(i, c) * p(j, c);
        for (std::size_t c = 0; c < d; ++c) p(i, c) -= dot * p(j, c);
      }
      double n = 0.0;
      for (std::size_t c = 0; c < d; ++c) n += p(i, c) * p(i, c);
      for (std::size_t c = 0; c < d; ++c) p(i, c) /= std::sqrt(n);
    }
    ad::Tape tape;
    worst_orth = std::max(worst_orth, std::abs(fdrt(tape.constant(p)).value().item()));

    const Tensor r = gaussian({k, d}, 1.0, rng);
    Tensor scaled = r;
    std::uniform_real_distribution<double> s(0.01, 100.0);
    for (std::size_t i = 0; i < k; ++i) {
      const double f = s(rng);
      for (std::size_t c = 0; c < d; ++c) scaled(i, c) *= f;
    }
    worst_scale = std::max(worst_scale, std::abs(fdrt(tape.constant(r)).value().item() -
                                                 fdrt(tape.constant(scaled)).value().item()));
  }
  ad::Tape tape;
  const double same = fdrt(tape.constant(Tensor::from_rows({{0.3, -1.2, 2.0, 0.5}, {0.3, -1.2, 2.0, 0.5}}))).value().item();
  o.require(worst_orth <= 1e-12, fmt("orthonormal P: max fdrt %.2e", worst_orth));
  o.require(std::abs(same - std::sqrt(2.0) / 4.0) <= 1e-12,
            fmt("K=2 identical rows: %.17g vs sqrt(2)/4 (diff %.2e)", same, std::abs(same - std::sqrt(2.0) / 4.0)));
  o.require(worst_scale <= 1e-10, fmt("row rescaling: max change %.2e", worst_scale));
  return o;
}

Outcome ac5() {
  Outcome o;
  Rng rng(55);
  bool bounded = true;
  double tightest = 0.0;
  ad::Tape tape;
  for (int t = 0; t < 200; ++t) {
    const std::size_t j = 4 + static_cast<std::size_t>(t % 21), k = 1 + static_cast<std::size_t>(t % 8);
    const ad::Var a = ad::softmax_rows(tape.constant(gaussian({j, k}, 0.5 + t % 5, rng)));
    for (double g : {1e-4, 1e-3, 1e-2, 0.1, 0.5, 1.0}) {
      const double v = acm_term(a, g).value().item();
      const double bound = static_cast<double>(j * k) * (g * g);
      bounded = bounded && v <= bound;
      tightest = std::max(tightest, v / bound);
    }
  }
  o.require(bounded, fmt("200 random alphas x 6 gammas: acm <= J*K*gamma^2 (max ratio %.6f)", tightest));
  bool exact = true;
  for (std::size_t j : {4, 24, 96, 192})
    for (double g : {1e-4, 1e-3, 1e-2, 0.1, 0.5}) {
      const double v = acm_term(ad::softmax_rows(tape.constant(gaussian({j, 1}, 1.0, rng))), g).value().item();
      if (v != static_cast<double>(j) * (g * g)) {
        exact = false;
        o.note(fmt("J=%zu gamma=%g: %.17g vs %.17g", j, g, v, static_cast<double>(j) * (g * g)));
      }
    }
  o.require(exact, "K=1: acm == J*gamma^2 exactly (J in {4,24,96,192}, 5 gammas)");
  return o;
}

RunConfig reference(std::uint64_t seed) {
  RunConfig rc;
  rc.seed = seed;
  rc.data.seed = seed;
  return rc;
}

// Mean over occluded query samples of the fused occlusion score; the plain
// (head-mean) score is returned through `plain`.
double query_occlusion_score(const Model& m, const Split& query, double* plain) {
  double fused = 0.0, flat = 0.0;
  std::size_t n = 0;
  for (const auto& s : query.samples) {
    if (!s.occluded()) continue;
    const AttentionSnapshot snap = attention_snapshot(m, s.input);
    fused += attention_occlusion_score(snap.alpha, s.mask, snap.beta);
    flat += attention_occlusion_score(snap.alpha, s.mask);
    ++n;
  }
  if (plain) *plain = flat / static_cast<double>(n);
  return fused / static_cast<double>(n);
}

Outcome ac6() {
  Outcome o;
  std::vector<double> ours, base, trained_score, untrained_score;
  double slowest = 0.0;
  for (std::uint64_t seed : kSeeds) {
    const auto t0 = Clock::now();
    RunConfig rc = reference(seed);
    rc.eval_variant = Variant::local;
    const Dataset data = generate_dataset(rc.data_spec());
    const ExperimentResult full = run_experiment(rc, data);

    RunConfig rb = rc;
    rb.branch.enabled = false;
    const ExperimentResult baseline = run_experiment(rb, data);
    if (!full.report || !baseline.report) {
      o.require(false, fmt("seed %llu: training failed", static_cast<unsigned long long>(seed)));
      continue;
    }
    ours.push_back(100.0 * full.report->rank(1));
    base.push_back(100.0 * baseline.report->rank(1));

    double plain_trained = 0.0, plain_uniform = 0.0;
    trained_score.push_back(query_occlusion_score(full.training.model, data.query, &plain_trained));
    ModelConfig mc = rc.train_config().model;
    mc.num_classes = rc.data.n_ids;
    Rng rng(seed);
    Model untrained = Model::init(mc, rng);
    untrained.branch.w2.fill(0.0);
    untrained_score.push_back(query_occlusion_score(untrained, data.query, &plain_uniform));
    const double secs = seconds_since(t0);
    slowest = std::max(slowest, secs);
    o.note(fmt("seed %llu: Rank-1 local %.1f%% vs global baseline %.1f%%; fused occlusion score %.4f vs uniform %.4f "
               "(head-mean %.4f vs %.4f); %.1f s",
               static_cast<unsigned long long>(seed), ours.back(), base.back(), trained_score.back(),
               untrained_score.back(), plain_trained, plain_uniform, secs));
  }
  if (ours.size() != std::size(kSeeds)) return o;
  const double gap = median(ours) - median(base);
  o.require(gap >= 10.0, fmt("(a) median Rank-1 local %.1f%% - baseline %.1f%% = %.1f points >= 10", median(ours),
                             median(base), gap));
  const double rel = 1.0 - median(trained_score) / median(untrained_score);
  o.require(rel >= 0.2, fmt("(b) median occlusion score %.4f vs uniform-attention %.4f: %.1f%% lower (>= 20%%)",
                            median(trained_score), median(untrained_score), 100.0 * rel));
  o.require(slowest <= 600.0, fmt("slowest seed %.1f s <= 600 s", slowest));
  return o;
}

Outcome ac7() {
  Outcome o;
  std::vector<double> saffm, sum, concat, zero;
  for (std::uint64_t seed : kSeeds) {
    const Dataset data = generate_dataset(reference(seed).data_spec());
    auto rank1 = [&](const std::function<void(RunConfig&)>& edit) {
      RunConfig rc = reference(seed);
      rc.eval_variant = Variant::local;
      edit(rc);
      rc.eval_fusion = rc.branch.fusion;
      const ExperimentResult r = run_experiment(rc, data);
      return r.report ? 100.0 * r.report->rank(1) : std::nan("");
    };
    saffm.push_back(rank1([](RunConfig&) {}));
    sum.push_back(rank1([](RunConfig& c) { c.branch.fusion = FusionMode::sum; }));
    concat.push_back(rank1([](RunConfig& c) { c.branch.fusion = FusionMode::concat; }));
    zero.push_back(rank1([](RunConfig& c) { c.loss.lambda1 = c.loss.lambda2 = c.loss.lambda3 = 0.0; }));
    o.note(fmt("seed %llu: Rank-1 saffm %.1f%%  sum %.1f%%  concat %.1f%%  lambdas zero %.1f%%",
               static_cast<unsigned long long>(seed), saffm.back(), sum.back(), concat.back(), zero.back()));
  }
  o.require(median(saffm) >= median(sum), fmt("median saffm %.1f%% >= sum %.1f%%", median(saffm), median(sum)));
  o.require(median(saffm) >= median(concat), fmt("median saffm %.1f%% >= concat %.1f%%", median(saffm), median(concat)));
  o.require(median(saffm) >= median(zero) - 1.0,
            fmt("median with regularizers %.1f%% >= lambdas zero %.1f%% - 1", median(saffm), median(zero)));
  return o;
}

Outcome ac8() {
  Outcome o;
  const fs::path dir = testutil::temp_dir("acceptance_ac8");
  RunConfig rc = reference(8);
  const Dataset data = generate_dataset(rc.data_spec());
  for (const char* run : {"a", "b"}) {
    const TrainResult r = train(rc.train_config(), data.train);
    fs::create_directories(dir / run);
    write_metrics_csv(dir / run / "metrics.csv", r.metrics);
    save_checkpoint(dir / run / "checkpoint.mhsa", r.model);
  }
  o.require(slurp(dir / "a" / "metrics.csv") == slurp(dir / "b" / "metrics.csv"), "metrics CSV byte-identical across runs");
  o.require(slurp(dir / "a" / "checkpoint.mhsa") == slurp(dir / "b" / "checkpoint.mhsa"),
            "checkpoint byte-identical across runs");

  const TrainResult r = train(rc.train_config(), data.train);
  const Model loaded = load_checkpoint(dir / "a" / "checkpoint.mhsa");
  bool same = true;
  for (Variant v : {Variant::full, Variant::local}) {
    const EvalReport x = evaluate(r.model, data, v, rc.eval_fusion);
    const EvalReport y = evaluate(loaded, data, v, rc.eval_fusion);
    same = same && x.cmc == y.cmc && x.ap == y.ap && x.mAP == y.mAP;
  }
  o.require(same, "reloaded checkpoint reproduces the eval report bit-exactly (full and local)");

  // Flip bytes inside tensor payloads and in the checksum.
  const std::string bytes = slurp(dir / "a" / "checkpoint.mhsa");
  std::vector<std::size_t> targets;
  std::size_t offset = 10;
  for (const auto& e : model_to_entries(loaded)) {
    offset += 2 + e.name.size() + 1 + 4 * e.tensor.rank();
    targets.push_back(offset + (e.tensor.size() * 8) / 2);
    offset += 8 * e.tensor.size();
  }
  o.require(offset + 4 == bytes.size(), "container layout accounts for every byte");
  for (std::size_t i = 0; i < 4; ++i) targets.push_back(bytes.size() - 1 - i);
  std::size_t rejected = 0, tried = 0;
  for (std::size_t pos : targets) {
    std::string bad = bytes;
    bad[pos] = static_cast<char>(bad[pos] ^ 0x5a);
    std::ofstream(dir / "bad.mhsa", std::ios::binary) << bad;
    ++tried;
    try {
      load_checkpoint(dir / "bad.mhsa");
    } catch (const CrcError&) {
      ++rejected;
    } catch (const Error&) {
    }
  }
  o.require(rejected == tried, fmt("%zu/%zu single-byte corruptions (one per tensor payload, plus checksum) rejected with a CRC error", rejected, tried));
  return o;
}

Outcome ac9() {
  Outcome o;
  const fs::path dir = testutil::temp_dir("acceptance_ac9");
  struct Grid {
    std::string param;
    std::vector<double> values;
    double lambda1, lambda2, lambda3;
  };
  // Each grid switches off the other regularizers.
  const std::vector<Grid> grids = {
      {"K", {1, 2, 3, 4, 5, 6, 7, 8, 9}, 0.0, 0.0, 0.0},
      {"lambda1", {1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1}, 1e-4, 0.0, 0.0},
      {"lambda2", {1e-2, 1e-1, 1.0, 1e1, 1e2}, 0.0, 1.0, 0.0},
      {"lambda3", {1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0}, 0.0, 0.0, 1e-3},
      {"gamma", {1e-4, 1e-3, 1e-2, 1e-1, 5e-1, 1.0}, 0.0, 0.0, 1e-3},
  };
  const auto t0 = Clock::now();
  const Dataset data = generate_dataset(reference(1).data_spec());
  for (const Grid& g : grids) {
    RunConfig rc = reference(1);
    rc.loss.lambda1 = g.lambda1;
    rc.loss.lambda2 = g.lambda2;
    rc.loss.lambda3 = g.lambda3;
    const auto rows = run_sweep(rc, g.param, g.values, data);
    const fs::path csv = dir / ("sweep_" + g.param + ".csv");
    write_sweep_csv(csv, rows);

    std::istringstream lines(slurp(csv));
    std::string line;
    std::getline(lines, line);
    bool well_formed = line == "value,rank1,rank5,rank10,mAP";
    std::vector<double> seen;
    std::string summary;
    std::size_t failures = 0;
    while (std::getline(lines, line)) {
      std::istringstream cells(line);
      std::string cell;
      std::vector<double> v;
      while (std::getline(cells, cell, ',')) v.push_back(std::stod(cell));
      well_formed = well_formed && v.size() == 5;
      if (v.empty()) continue;
      seen.push_back(v[0]);
      if (v.size() == 5 && std::isnan(v[1])) ++failures;
      if (v.size() == 5) summary += fmt(" %g:%.1f", v[0], 100.0 * v[1]);
    }
    for (const auto& r : rows)
      if (!r.report) o.note(fmt("%s=%g failed: %s", g.param.c_str(), r.value, r.error.c_str()));
    o.require(well_formed && seen == g.values && failures == 0,
              fmt("%s: %zu/%zu values completed; Rank-1%s", g.param.c_str(), g.values.size() - failures,
                  g.values.size(), summary.c_str()));
  }
  o.note(fmt("sweeps took %.1f s", seconds_since(t0)));
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"AC1 gradient correctness", ac1},
      {"AC2 IHTL oracle equivalence", ac2},
      {"AC3 retrieval oracle equivalence", ac3},
      {"AC4 FDRT analytic anchors", ac4},
      {"AC5 ACM saturation bounds", ac5},
      {"AC6 occlusion robustness direction", ac6},
      {"AC7 ablation direction", ac7},
      {"AC8 determinism and persistence", ac8},
      {"AC9 sweep harness", ac9},
  };
  // Optional filter: `mhsa_acceptance AC3 AC8` runs a subset.
  const std::vector<std::string> only(argv + 1, argv + argc);
  int failed = 0;
  for (const auto& [name, run] : criteria) {
    if (!only.empty() && std::none_of(only.begin(), only.end(), [&](const std::string& s) { return name.rfind(s, 0) == 0; }))
      continue;
    const auto t0 = Clock::now();
    Outcome out;
    try {
      out = run();
    } catch (const std::exception& e) {
      out.require(false, std::string("exception: ") + e.what());
    }
    std::printf("%s %s (%.1f s)\n", out.pass ? "PASS" : "FAIL", name.c_str(), seconds_since(t0));
    for (const auto& d : out.details) std::printf("    %s\n", d.c_str());
    std::fflush(stdout);
    if (!out.pass) ++failed;
  }
  return failed == 0 ? 0 : 1;
}
