// End-to-end acceptance suite: one test per shipped guarantee. Each test
// prints exactly one [PASS]/[FAIL] line naming the guarantee it checks, so
// the log doubles as a release checklist. Numeric claims are verified against
// the independent reference implementations in oracles.hpp, not against the
// library's own algorithms.
#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "vesselforge/augment.hpp"
#include "vesselforge/metrics.hpp"
#include "vesselforge/model.hpp"
#include "vesselforge/morphometry.hpp"
#include "vesselforge/phantom.hpp"
#include "vesselforge/selftrain.hpp"
#include "vesselforge/stats.hpp"
#include "vesselforge/volume.hpp"

#include "oracles.hpp"

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;
using namespace vesselforge;

// Prints the verdict line for one criterion when the test body finishes.
struct Verdict {
  std::string label;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  explicit Verdict(std::string l) : label(std::move(l)) {}
  double elapsed() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
  ~Verdict() {
    std::printf("[%s] %s (%.1f s)\n", ::testing::Test::HasFailure() ? "FAIL" : "PASS", label.c_str(), elapsed());
    std::fflush(stdout);
  }
};

// ------------------------------------------------------------- CLI plumbing

struct CliResult {
  int exit_code = -1;
  std::string output;
};

CliResult run_shell(const std::string& cmd) {
  CliResult r;
  FILE* pipe = popen((cmd + " 2>&1").c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  while (size_t n = fread(buf, 1, sizeof(buf), pipe)) r.output.append(buf, n);
  const int status = pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

CliResult run_cli(const std::string& args) { return run_shell(std::string(VESSELFORGE_CLI_PATH) + " " + args); }

CliResult run_cli_in(const fs::path& cwd, const std::string& args) {
  return run_shell("cd '" + cwd.string() + "' && " + std::string(VESSELFORGE_CLI_PATH) + " " + args);
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "vesselforge_acceptance" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json slurp_json(const fs::path& p) { return json::parse(slurp(p)); }

void write_file(const fs::path& p, const std::string& content) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out << content;
}

void write_json_file(const fs::path& p, const json& j) { write_file(p, j.dump(2) + "\n"); }

std::vector<std::string> relative_files(const fs::path& root) {
  std::vector<std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out.push_back(fs::relative(e.path(), root).string());
  std::sort(out.begin(), out.end());
  return out;
}

void expect_dirs_byte_identical(const fs::path& a, const fs::path& b, const std::string& what) {
  const auto fa = relative_files(a), fb = relative_files(b);
  EXPECT_EQ(fa, fb) << what << ": file sets differ";
  for (const auto& rel : fa) {
    if (!fs::exists(b / rel)) continue;
    EXPECT_EQ(slurp(a / rel), slurp(b / rel)) << what << ": " << rel;
  }
}

std::vector<std::string> string_array(const json& arr) {
  std::vector<std::string> out;
  for (const auto& v : arr) out.push_back(v.get<std::string>());
  return out;
}

// ---------------------------------------------------------------- criteria

TEST(Acceptance, SegmentationMetrics) {
  Verdict v("01 confusion counts and overlap metrics match brute-force voxel counting");
  std::mt19937_64 rng(9001);
  const Dims dims{8, 8, 8};
  const Spacing sp{1.0, 1.0, 1.0};
  const double densities[] = {0.3, 0.5, 0.08, 0.85};

  for (int trial = 0; trial < 200; ++trial) {
    const BinaryMask pred = oracle::random_mask(rng, dims, sp, densities[trial % 4]);
    const BinaryMask truth = oracle::random_mask(rng, dims, sp, densities[(trial + 1) % 4]);
    const ConfusionCounts c = confusion(pred, truth);
    const oracle::Confusion oc = oracle::confusion(pred, truth);
    ASSERT_EQ(c.tp, oc.tp);
    ASSERT_EQ(c.fp, oc.fp);
    ASSERT_EQ(c.fn, oc.fn);
    ASSERT_EQ(c.tn, oc.tn);
    ASSERT_EQ(c.tp + c.fp + c.fn + c.tn, dims.total());

    const double lib_dsc = dsc(pred, truth);
    const double lib_iou = iou(pred, truth);
    ASSERT_NEAR(lib_dsc, oracle::dsc(oc), 1e-12);
    ASSERT_NEAR(lib_iou, oracle::iou(oc), 1e-12);
    // the two overlap scores are locked together algebraically
    ASSERT_NEAR(lib_dsc, 2.0 * lib_iou / (1.0 + lib_iou), 1e-12);
    if (oc.tp + oc.fn > 0)
      ASSERT_NEAR(sensitivity(c), static_cast<double>(oc.tp) / static_cast<double>(oc.tp + oc.fn), 1e-12);
    if (oc.tp + oc.fp > 0)
      ASSERT_NEAR(precision(c), static_cast<double>(oc.tp) / static_cast<double>(oc.tp + oc.fp), 1e-12);
  }

  // conventions for degenerate masks: empty/empty is perfect agreement
  const BinaryMask empty(dims, sp);
  EXPECT_DOUBLE_EQ(dsc(empty, empty), 1.0);
  EXPECT_DOUBLE_EQ(iou(empty, empty), 1.0);
  EXPECT_LT(v.elapsed(), 10.0);
}

TEST(Acceptance, HardRegionLoss) {
  Verdict v("02 hard-voxel loss: zero-gate equivalence, finite-difference gradients, monotone gate");
  std::mt19937_64 rng(9002);

  // gate at zero selects every voxel and reproduces the plain mean CE
  for (int trial = 0; trial < 100; ++trial) {
    const Dims dims{5, 6, 7};
    const Spacing sp{1.0, 1.0, 1.0};
    ProbabilityVolume pv(dims, sp);
    BinaryMask labels(dims, sp);
    std::uniform_real_distribution<double> up(0.01, 0.99);
    std::bernoulli_distribution uy(0.5);
    for (size_t i = 0; i < pv.probs.size(); ++i) {
      pv.probs[i] = static_cast<float>(up(rng));
      labels.bits[i] = uy(rng) ? 1 : 0;
    }
    const HraLoss got = hra_ce_loss(pv, labels, 0.0);
    ASSERT_EQ(got.selected_count, dims.total());
    double want = 0.0;
    for (size_t i = 0; i < pv.probs.size(); ++i) {
      const double y = labels.bits[i] ? 1.0 : 0.0;
      const double p = pv.probs[i];
      want -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
    }
    want /= static_cast<double>(dims.total());
    ASSERT_NEAR(got.loss, want, 1e-12);
  }

  // analytic gradient against central finite differences of the same loss
  const Dims gdims{5, 5, 5};
  const Spacing gsp{1.0, 1.0, 1.0};
  const size_t F = 4;
  const double T = 0.1, eps = 1e-6;
  std::vector<size_t> all(gdims.total());
  for (size_t i = 0; i < all.size(); ++i) all[i] = i;
  std::uniform_real_distribution<double> uw(-0.8, 0.8), ub(-0.5, 0.5), uf(-2.0, 2.0);
  std::bernoulli_distribution uy(0.5);
  int accepted = 0, attempts = 0;
  while (accepted < 50 && attempts < 2000) {
    ++attempts;
    VoxelClassifier model(F);
    for (auto& w : model.w) w = uw(rng);
    model.b = ub(rng);
    FeatureVolume fv;
    fv.dims = gdims;
    fv.spacing = gsp;
    fv.F = F;
    fv.values.resize(gdims.total() * F);
    for (auto& x : fv.values) x = static_cast<float>(uf(rng));
    BinaryMask labels(gdims, gsp);
    for (auto& b : labels.bits) b = uy(rng) ? 1 : 0;

    // keep every voxel a safe margin away from the gate so the finite
    // difference cannot flip the selected set
    bool safe = true;
    for (size_t i = 0; i < all.size() && safe; ++i) {
      double t = model.b;
      for (size_t c = 0; c < F; ++c) t += model.w[c] * static_cast<double>(fv.value(i, c));
      const double p = 1.0 / (1.0 + std::exp(-t));
      const double y = labels.bits[i] ? 1.0 : 0.0;
      if (std::abs(std::abs(y - p) - T) < 1e-3) safe = false;
    }
    if (!safe) continue;
    ++accepted;

    const ParamGradient g = hra_ce_gradient(model, fv, labels, T, all);
    ASSERT_GE(g.selected_count, 1u);
    std::vector<double> analytic = g.dw;
    analytic.push_back(g.db);
    std::vector<double> fd;
    for (size_t k = 0; k <= F; ++k) {
      VoxelClassifier lo = model, hi = model;
      if (k < F) {
        hi.w[k] += eps;
        lo.w[k] -= eps;
      } else {
        hi.b += eps;
        lo.b -= eps;
      }
      const double lp = hra_ce_gradient(hi, fv, labels, T, all).loss;
      const double lm = hra_ce_gradient(lo, fv, labels, T, all).loss;
      fd.push_back((lp - lm) / (2.0 * eps));
    }
    double num = 0.0, den = 0.0;
    for (size_t k = 0; k < analytic.size(); ++k) {
      num += (analytic[k] - fd[k]) * (analytic[k] - fd[k]);
      den += analytic[k] * analytic[k];
    }
    ASSERT_GT(den, 0.0);
    ASSERT_LT(std::sqrt(num) / std::sqrt(den), 1e-5);
  }
  ASSERT_EQ(accepted, 50) << "could not draw enough gate-safe instances";

  // raising the gate can only shrink the selected set
  const Dims mdims{8, 8, 8};
  ProbabilityVolume pv(mdims, gsp);
  BinaryMask labels(mdims, gsp);
  std::uniform_real_distribution<double> up(0.01, 0.99);
  for (size_t i = 0; i < pv.probs.size(); ++i) {
    pv.probs[i] = static_cast<float>(up(rng));
    labels.bits[i] = uy(rng) ? 1 : 0;
  }
  HraLoss prev = hra_ce_loss(pv, labels, 0.0);
  for (const double t : {0.1, 0.2, 0.3, 0.4, 0.5}) {
    const HraLoss cur = hra_ce_loss(pv, labels, t);
    EXPECT_LE(cur.selected_count, prev.selected_count);
    for (size_t i = 0; i < cur.selected.bits.size(); ++i)
      if (cur.selected.bits[i]) ASSERT_TRUE(prev.selected.bits[i]) << "gate " << t << " admitted a new voxel";
    prev = cur;
  }
}

TEST(Acceptance, StabilityScore) {
  Verdict v("03 checkpoint stability score equals summed IoU against the last checkpoint");
  std::mt19937_64 rng(9003);
  const Spacing sp{1.0, 1.0, 1.0};

  // K identical checkpoints score exactly K-1
  const BinaryMask m = oracle::random_mask(rng, {4, 4, 4}, sp, 0.4);
  EXPECT_DOUBLE_EQ(stability_score({m, m, m, m}), 3.0);

  // pairwise-disjoint checkpoints score exactly 0
  BinaryMask a({1, 1, 8}, sp), b({1, 1, 8}, sp), c({1, 1, 8}, sp);
  a.bits[0] = b.bits[1] = c.bits[2] = 1;
  EXPECT_DOUBLE_EQ(stability_score({a, b, c}), 0.0);

  // hand-checked value: IoUs 0.5 and 0.25 against the reference
  BinaryMask ha({2, 2, 2}, sp), hb({2, 2, 2}, sp), hc({2, 2, 2}, sp);
  hc.bits[0] = hc.bits[1] = hc.bits[2] = hc.bits[3] = 1;
  ha.bits[0] = ha.bits[1] = 1;
  hb.bits[0] = 1;
  EXPECT_NEAR(stability_score({ha, hb, hc}), 0.75, 1e-12);

  for (int trial = 0; trial < 100; ++trial) {
    const size_t k = 2 + static_cast<size_t>(trial % 5);
    std::vector<BinaryMask> masks;
    for (size_t j = 0; j < k; ++j) masks.push_back(oracle::random_mask(rng, {4, 5, 3}, sp, 0.4));
    double want = 0.0;
    for (size_t j = 0; j + 1 < k; ++j) want += oracle::iou(oracle::confusion(masks[j], masks.back()));
    ASSERT_NEAR(stability_score(masks), want, 1e-12);
  }
}

TEST(Acceptance, CandidateSelection) {
  Verdict v("04 reliable-candidate selection matches an independent sort-and-filter reference");
  std::mt19937_64 rng(9004);

  for (int round = 0; round < 100; ++round) {
    SelectionRule rule;
    rule.min_mean_precision = (round % 2) ? 0.9 : 0.8;
    rule.min_mean_dice = (round % 3 == 0) ? 0.0 : (round % 3 == 1) ? 0.75 : 0.85;
    const size_t caps[] = {1, 3, 5, 100};
    rule.cap = caps[round % 4];

    const size_t n = static_cast<size_t>(round % 25);
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<PseudoLabelCandidate> cands(n);
    std::vector<oracle::CandidateRow> rows(n);
    for (size_t j = 0; j < n; ++j) {
      char id[8];
      std::snprintf(id, sizeof(id), "s%02zu", order[j]);
      cands[j].scan_id = id;
      // quantized scores force stability ties and exact-threshold hits
      cands[j].stability = static_cast<double>(rng() % 17) * 0.25;
      cands[j].mean_precision = 0.70 + static_cast<double>(rng() % 31) * 0.01;
      cands[j].mean_dice = 0.70 + static_cast<double>(rng() % 31) * 0.01;
      if (j == 0 && n > 0) cands[j].mean_precision = rule.min_mean_precision;  // strict >, must be excluded
      rows[j] = {cands[j].scan_id, cands[j].stability, cands[j].mean_precision, cands[j].mean_dice};
    }

    SelectionPolicy policy;
    const size_t iteration = static_cast<size_t>(round % 2);
    policy.iterations.assign(iteration + 1, SelectionRule{});
    policy.iterations[iteration] = rule;
    const Selection got = select_reliable(cands, policy, iteration);
    const oracle::SelectionRef want =
        oracle::select_ref(rows, rule.min_mean_precision, rule.min_mean_dice, rule.cap);
    ASSERT_EQ(got.selected, want.selected) << "round " << round;
    ASSERT_EQ(got.remainder, want.remainder) << "round " << round;
    ASSERT_LE(got.selected.size(), rule.cap);
    for (const auto& id : got.selected) {
      const auto it = std::find_if(rows.begin(), rows.end(),
                                   [&](const oracle::CandidateRow& r) { return r.id == id; });
      ASSERT_NE(it, rows.end());
      ASSERT_GT(it->mean_precision, rule.min_mean_precision);
      ASSERT_GT(it->mean_dice, rule.min_mean_dice);
    }
  }
}

TEST(Acceptance, SelfTrainingBenchmark) {
  Verdict v("05 self-training benchmark: precision rises and dice holds on every published seed");
  const fs::path cfg = fs::path(VESSELFORGE_CONFIG_DIR);
  ASSERT_TRUE(fs::exists(cfg / "benchmark_corpus.json"));
  const std::vector<uint64_t> seeds = slurp_json(cfg / "benchmark_seeds.json").at("seeds").get<std::vector<uint64_t>>();
  ASSERT_GE(seeds.size(), 3u);

  for (const uint64_t seed : seeds) {
    const fs::path wd = fresh_dir("benchmark_" + std::to_string(seed));
    CliResult r = run_cli("phantom --spec " + (cfg / "benchmark_corpus.json").string() + " --out " +
                          (wd / "corpus").string() + " --seed " + std::to_string(seed));
    ASSERT_EQ(r.exit_code, 0) << r.output;

    // the pipeline config addresses the corpus by relative path
    r = run_cli_in(wd, "pipeline --config " + (cfg / "benchmark_pipeline.json").string() + " --out run --seed " +
                           std::to_string(seed));
    ASSERT_EQ(r.exit_code, 0) << r.output;

    const json report = slurp_json(wd / "run" / "report.json");
    const auto& stages = report.at("stages");
    ASSERT_EQ(stages.size(), 4u);
    ASSERT_EQ(stages.at(0).at("stage"), "baseline");
    ASSERT_EQ(stages.at(1).at("stage"), "iteration-1");
    ASSERT_EQ(stages.at(2).at("stage"), "iteration-2");
    ASSERT_EQ(stages.at(3).at("stage"), "final");

    const double base_p = stages.at(0).at("test_metrics").at("precision").get<double>();
    const double base_d = stages.at(0).at("test_metrics").at("dsc").get<double>();
    const double fin_p = stages.at(3).at("test_metrics").at("precision").get<double>();
    const double fin_d = stages.at(3).at("test_metrics").at("dsc").get<double>();
    std::printf("    seed %llu: precision %+.4f, dice %+.4f\n", static_cast<unsigned long long>(seed),
                fin_p - base_p, fin_d - base_d);
    EXPECT_GE(fin_p, base_p + 0.005) << "seed " << seed << ": precision did not improve enough";
    EXPECT_GE(fin_d, base_d - 0.02) << "seed " << seed << ": dice degraded too much";

    // each iteration splits the previous unlabeled pool into selected + rest
    std::vector<std::string> pool;
    const json unl = slurp_json(wd / "corpus" / "unlabeled.json");
    for (const auto& s : unl.at("scans")) pool.push_back(s.at("id").get<std::string>());
    for (const size_t si : {size_t{1}, size_t{2}}) {
      const auto sel = string_array(stages.at(si).at("selected"));
      const auto rem = string_array(stages.at(si).at("remainder"));
      std::vector<std::string> expect_rem;
      for (const auto& id : pool)
        if (std::find(sel.begin(), sel.end(), id) == sel.end()) expect_rem.push_back(id);
      ASSERT_EQ(rem, expect_rem) << "seed " << seed << " stage " << si;
      for (const auto& id : sel) ASSERT_NE(std::find(pool.begin(), pool.end(), id), pool.end());
      pool = rem;
    }
    ASSERT_EQ(string_array(stages.at(3).at("remainder")), pool);

    std::stringstream csv(slurp(wd / "run" / "stage_metrics.csv"));
    std::vector<std::string> lines;
    for (std::string line; std::getline(csv, line);) lines.push_back(line);
    ASSERT_EQ(lines.size(), 5u);
    EXPECT_EQ(lines[0], "stage,dsc,iou,sensitivity,precision");
  }
  EXPECT_LT(v.elapsed(), 900.0);
}

TEST(Acceptance, MorphometryPhantoms) {
  Verdict v("06 morphometry recovers analytic tube and tree phantom geometry");

  // straight cylinder with known volume, radius and topology
  TubeSpec ts;
  ts.dims = {128, 48, 48};
  ts.spacing = {0.5, 0.5, 0.5};
  ts.radius_mm = 2.0;
  ts.length_mm = 50.0;
  const TubePhantom tube = generate_tube_phantom(ts);
  EXPECT_NEAR(tube.truth.volume_mm3, 628.3185, 0.001);
  const MorphometryResult tr = analyze_mask(tube.mask);
  const double truth_ml = tube.truth.volume_mm3 / 1000.0;
  EXPECT_NEAR(tr.report.tbv_ml, truth_ml, 0.1 * truth_ml);
  EXPECT_EQ(tr.report.n_segments, 1u);
  EXPECT_EQ(tr.report.n_endpoints, 2u);
  EXPECT_EQ(tr.report.n_branchpoints, 0u);
  ASSERT_EQ(tr.graph.segments.size(), 1u);
  EXPECT_NEAR(tr.graph.segments[0].mean_radius_mm, 2.0, 0.5);
  // cross-section is far above the small-vessel cutoff
  EXPECT_EQ(tr.report.bv5_ml, 0.0);

  // one bifurcation: three segments, three endpoints, one branchpoint
  PhantomSpec ys;
  ys.dims = {28, 28, 28};
  ys.spacing = {0.7, 0.7, 0.7};
  ys.tree.depth = 1;
  ys.tree.root_radius_mm = 1.3;
  ys.tree.length_min_mm = 6.0;
  ys.tree.length_max_mm = 8.0;
  ys.tree.angle_min_deg = 30.0;
  ys.tree.angle_max_deg = 40.0;
  ys.tree.root_start_frac = {0.15, 0.5, 0.5};
  ys.seed = 14;
  const TreePhantom y = generate_tree_phantom(ys);
  ASSERT_TRUE(y.truth.clearance_ok);
  ASSERT_FALSE(y.truth.truncated_any);
  ASSERT_EQ(y.truth.segments.size(), 3u);
  const MorphometryResult yr = analyze_mask(y.mask);
  EXPECT_EQ(yr.report.n_segments, 3u);
  EXPECT_EQ(yr.report.n_endpoints, 3u);
  EXPECT_EQ(yr.report.n_branchpoints, 1u);

  // three-level tree with enforced branch clearance: counts match the
  // generator's ground truth exactly
  PhantomSpec d3;
  d3.tree.min_clearance_mm = 2.8;
  d3.seed = 0;
  const TreePhantom deep = generate_tree_phantom(d3);
  ASSERT_TRUE(deep.truth.clearance_ok);
  ASSERT_FALSE(deep.truth.truncated_any);
  const MorphometryResult dr = analyze_mask(deep.mask);
  EXPECT_EQ(dr.report.n_segments, deep.truth.segments.size());
  EXPECT_EQ(dr.report.n_endpoints, deep.truth.n_endpoints);
  EXPECT_EQ(dr.report.n_branchpoints, deep.truth.n_branchpoints);
  EXPECT_LT(v.elapsed(), 60.0);
}

TEST(Acceptance, MorphometryInvariants) {
  Verdict v("07 morphometry invariants: volume partition, radius bins, topology, spacing scale");

  for (int i = 0; i < 50; ++i) {
    PhantomSpec spec;
    spec.dims = {36, 36, 36};
    spec.spacing = {0.5, 0.5, 0.5};
    spec.tree.depth = 2;
    spec.tree.root_radius_mm = 1.2 + 0.1 * static_cast<double>(i % 4);
    spec.tree.length_min_mm = 4.0;
    spec.tree.length_max_mm = 7.0;
    spec.tree.length_decay = 0.8;
    spec.tree.min_clearance_mm = 0.0;
    spec.seed = 5000 + static_cast<uint64_t>(i);
    const TreePhantom ph = generate_tree_phantom(spec);
    const MorphometryResult res = analyze_mask(ph.mask);
    const MorphometryReport& rep = res.report;
    ASSERT_GT(rep.tbv_ml, 0.0);

    // segment volumes partition the total blood volume
    double sum_vol = 0.0;
    for (const auto& seg : res.graph.segments) sum_vol += seg.volume_ml;
    ASSERT_NEAR(sum_vol, rep.tbv_ml, 1e-9 * rep.tbv_ml);

    ASSERT_GE(rep.bv5_ml, 0.0);
    ASSERT_LE(rep.bv5_ml, rep.tbv_ml + 1e-12);
    ASSERT_NEAR(rep.bv5_tbv, rep.bv5_ml / rep.tbv_ml, 1e-12);

    size_t binned = 0;
    for (const size_t b : rep.radius_bins) binned += b;
    ASSERT_EQ(binned, rep.n_segments);
    ASSERT_EQ(res.graph.segments.size(), rep.n_segments);

    // the skeleton preserves the mask's connectivity structure
    const Skeleton sk = skeletonize(ph.mask);
    ASSERT_EQ(connected_components(sk.mask, Connectivity::TwentySix).count,
              connected_components(ph.mask, Connectivity::TwentySix).count)
        << "seed " << spec.seed;

    // doubling the voxel pitch doubles lengths and radii and scales volume x8
    if (i % 5 == 0) {
      BinaryMask scaled(ph.mask.dims, Spacing{1.0, 1.0, 1.0});
      scaled.bits = ph.mask.bits;
      const MorphometryResult res2 = analyze_mask(scaled);
      ASSERT_EQ(res2.report.n_segments, rep.n_segments);
      ASSERT_EQ(res2.report.n_endpoints, rep.n_endpoints);
      ASSERT_EQ(res2.report.n_branchpoints, rep.n_branchpoints);
      ASSERT_NEAR(res2.report.tree_length_mm, 2.0 * rep.tree_length_mm, 1e-12 * rep.tree_length_mm);
      ASSERT_NEAR(res2.report.tbv_ml, 8.0 * rep.tbv_ml, 1e-12 * rep.tbv_ml);
      ASSERT_EQ(res2.graph.segments.size(), res.graph.segments.size());
      for (size_t s = 0; s < res.graph.segments.size(); ++s) {
        const VesselSegment& s1 = res.graph.segments[s];
        const VesselSegment& s2 = res2.graph.segments[s];
        ASSERT_NEAR(s2.length_mm, 2.0 * s1.length_mm, 1e-12 * std::max(1.0, s1.length_mm));
        ASSERT_NEAR(s2.mean_radius_mm, 2.0 * s1.mean_radius_mm, 1e-12);
        ASSERT_NEAR(s2.volume_ml, 8.0 * s1.volume_ml, 1e-12 * std::max(1e-6, s1.volume_ml));
      }
    }
  }
}

TEST(Acceptance, DistanceAndComponents) {
  Verdict v("08 distance transform and connected components match brute-force references");
  std::mt19937_64 rng(9008);
  const Spacing spacings[] = {{1.0, 1.0, 1.0}, {0.5, 0.7, 0.9}, {2.0, 0.5, 1.25}};

  for (int trial = 0; trial < 50; ++trial) {
    const Dims dims{3 + static_cast<int64_t>(rng() % 8), 3 + static_cast<int64_t>(rng() % 8),
                    3 + static_cast<int64_t>(rng() % 8)};
    const Spacing sp = spacings[trial % 3];
    const BinaryMask mask = oracle::random_mask(rng, dims, sp, 0.55);

    const DistanceMap dm = distance_map(mask);
    const std::vector<double> ref = oracle::edt_sq(mask);
    ASSERT_EQ(dm.dist2.size(), ref.size());
    for (size_t i = 0; i < ref.size(); ++i)
      ASSERT_EQ(dm.dist2[i], ref[i]) << "trial " << trial << " voxel " << i << " (exact match required)";

    for (const int conn : {6, 26}) {
      const LabeledComponents got =
          connected_components(mask, conn == 6 ? Connectivity::Six : Connectivity::TwentySix);
      const oracle::FloodResult want = oracle::flood_components(mask, conn);
      ASSERT_EQ(got.count, want.count) << "trial " << trial << " conn " << conn;
      ASSERT_TRUE(oracle::same_partition(got.labels, want.labels)) << "trial " << trial << " conn " << conn;
      std::vector<size_t> sizes(static_cast<size_t>(got.count), 0);
      for (const int32_t l : got.labels)
        if (l > 0) ++sizes[static_cast<size_t>(l - 1)];
      ASSERT_EQ(got.sizes, sizes) << "trial " << trial << " conn " << conn;
    }
  }
  EXPECT_LT(v.elapsed(), 30.0);
}

TEST(Acceptance, GroupStatistics) {
  Verdict v("09 one-way ANOVA and Bonferroni post-hoc match textbook references");
  std::mt19937_64 rng(9009);
  std::uniform_real_distribution<double> ux(0.0, 10.0);

  // two groups: F must equal the pooled t statistic squared
  for (int trial = 0; trial < 20; ++trial) {
    GroupSamples a{"a", {}}, b{"b", {}};
    for (size_t i = 0; i < 5 + rng() % 8; ++i) a.values.push_back(ux(rng));
    for (size_t i = 0; i < 5 + rng() % 8; ++i) b.values.push_back(ux(rng));
    const AnovaResult an = one_way_anova({a, b});
    const double t = oracle::pooled_t(a.values, b.values);
    ASSERT_NEAR(an.f, t * t, 1e-9 * std::max(1.0, t * t));
    const PairwiseResult pt = pooled_t_test(a, b);
    ASSERT_NEAR(an.p, pt.p_raw, 1e-9);
  }

  // identical groups carry no signal
  const AnovaResult flat = one_way_anova({{"a", {1, 1, 1}}, {"b", {1, 1, 1}}, {"c", {1, 1, 1}}});
  EXPECT_DOUBLE_EQ(flat.f, 0.0);
  EXPECT_DOUBLE_EQ(flat.p, 1.0);

  // hand-checked sums of squares on a fixed three-group dataset
  const std::vector<GroupSamples> fixed = {{"g1", {6, 8, 4, 5, 3, 4}},
                                           {"g2", {8, 12, 9, 11, 6, 8}},
                                           {"g3", {13, 9, 11, 8, 7, 12}}};
  const oracle::AnovaSums sums = oracle::anova_sums({fixed[0].values, fixed[1].values, fixed[2].values});
  const AnovaResult fr = one_way_anova(fixed);
  EXPECT_NEAR(fr.ss_between, sums.ssb, 1e-9 * sums.ssb);
  EXPECT_NEAR(fr.ss_within, sums.ssw, 1e-9 * sums.ssw);
  EXPECT_NEAR(fr.f, sums.f, 1e-9 * sums.f);
  EXPECT_DOUBLE_EQ(fr.df_between, sums.dfb);
  EXPECT_DOUBLE_EQ(fr.df_within, sums.dfw);
  EXPECT_GT(fr.p, 0.0);
  EXPECT_LT(fr.p, 1.0);

  // four groups: all six pairwise comparisons, each p scaled by six
  std::vector<GroupSamples> four;
  for (int g = 0; g < 4; ++g) {
    GroupSamples gs{"g" + std::to_string(g), {}};
    for (int i = 0; i < 6; ++i) gs.values.push_back(ux(rng) + static_cast<double>(g));
    four.push_back(gs);
  }
  const std::vector<PairwiseResult> post = bonferroni_posthoc(four);
  ASSERT_EQ(post.size(), 6u);
  size_t idx = 0;
  for (size_t i = 0; i < 4; ++i)
    for (size_t j = i + 1; j < 4; ++j, ++idx) {
      EXPECT_EQ(post[idx].group_a, four[i].name);
      EXPECT_EQ(post[idx].group_b, four[j].name);
    }
  for (const auto& pr : post) {
    EXPECT_NEAR(pr.p_adjusted, std::min(1.0, 6.0 * pr.p_raw), 1e-12);
    EXPECT_EQ(pr.significant, pr.p_adjusted < 0.05);
    EXPECT_NEAR(pr.p_raw,
                pooled_t_test(*std::find_if(four.begin(), four.end(),
                                            [&](const GroupSamples& g) { return g.name == pr.group_a; }),
                              *std::find_if(four.begin(), four.end(),
                                            [&](const GroupSamples& g) { return g.name == pr.group_b; }))
                    .p_raw,
                1e-12);
  }
}

TEST(Acceptance, CliReproducibility) {
  Verdict v("10 every CLI subcommand is bytewise reproducible run-to-run");
  const fs::path dir = fresh_dir("repro");

  const json corpus_spec = {{"kind", "corpus"},
                            {"dims", {16, 16, 16}},
                            {"spacing_mm", {0.7, 0.7, 0.7}},
                            {"tree",
                             {{"depth", 1},
                              {"root_radius_mm", 1.0},
                              {"length_min_mm", 4.0},
                              {"length_max_mm", 6.0},
                              {"root_start_frac", {0.25, 0.5, 0.5}},
                              {"min_clearance_mm", 0.0}}},
                            {"intensity", {{"noise_sigma", 6.0}}},
                            {"splits", {{"labeled", 2}, {"validation", 1}, {"unlabeled", 4}, {"test", 2}}},
                            {"seed", 77}};
  write_json_file(dir / "corpus.json", corpus_spec);
  // Outputs may legitimately embed their own absolute paths (candidate files
  // point at the pseudo-label masks they ship with), so reruns must target
  // the same directory: run, set the first result aside, run again, compare.
  const auto rerun = [&](const std::string& name, const std::string& args_prefix) {
    const fs::path out = dir / name, saved = dir / (name + "_first");
    CliResult ra = run_cli(args_prefix + " --out " + out.string());
    ASSERT_EQ(ra.exit_code, 0) << name << ": " << ra.output;
    fs::rename(out, saved);
    CliResult rb = run_cli(args_prefix + " --out " + out.string());
    ASSERT_EQ(rb.exit_code, 0) << name << ": " << rb.output;
    expect_dirs_byte_identical(out, saved, name);
  };

  rerun("phantom", "phantom --spec " + (dir / "corpus.json").string());
  const fs::path corpus = dir / "phantom";
  // reruns hash the same effective config
  EXPECT_EQ(slurp_json(corpus / "manifest.json").at("config_hash"),
            slurp_json(dir / "phantom_first" / "manifest.json").at("config_hash"));

  const json train_cfg = {{"learning_rate", 0.05}, {"momentum", 0.9}, {"epochs", 9},
                          {"batch_size", 128},     {"checkpoint_every", 3}};
  const json feat_cfg = {{"levels", 2}, {"kmeans_k", 3}, {"kmeans_max_iters", 20}, {"kmeans_samples", 400}};
  const json policy = {{"iterations", json::array({{{"min_mean_precision", 0.2}, {"min_mean_dice", 0.2}, {"cap", 1}},
                                                   {{"min_mean_precision", 0.2}, {"min_mean_dice", 0.2}, {"cap", 1}}})}};

  write_json_file(dir / "train.json", json{{"labeled", (corpus / "labeled.json").string()},
                                           {"validation", (corpus / "validation.json").string()},
                                           {"train", train_cfg},
                                           {"features", feat_cfg},
                                           {"stage", 0},
                                           {"seed", 123}});
  rerun("train", "train --config " + (dir / "train.json").string());
  const fs::path model_dir = dir / "train";

  write_json_file(dir / "pl.json", json{{"model", (model_dir / "model.json").string()},
                                        {"checkpoints", (model_dir / "checkpoints.json").string()},
                                        {"unlabeled", (corpus / "unlabeled.json").string()},
                                        {"stability_k", 3},
                                        {"seed", 123}});
  rerun("pseudolabel", "pseudolabel --config " + (dir / "pl.json").string());

  write_json_file(dir / "select.json", json{{"candidates", (dir / "pseudolabel" / "candidates.json").string()},
                                            {"policy", policy},
                                            {"iteration", 0},
                                            {"seed", 123}});
  rerun("select", "select --config " + (dir / "select.json").string());

  write_json_file(dir / "pipe.json", json{{"labeled", (corpus / "labeled.json").string()},
                                          {"validation", (corpus / "validation.json").string()},
                                          {"unlabeled", (corpus / "unlabeled.json").string()},
                                          {"test", (corpus / "test.json").string()},
                                          {"train", train_cfg},
                                          {"features", feat_cfg},
                                          {"policy", policy},
                                          {"stability_k", 3},
                                          {"seed", 123}});
  rerun("pipeline", "pipeline --config " + (dir / "pipe.json").string());
  rerun("iterate", "iterate --config " + (dir / "pipe.json").string());
  // the alias runs the identical computation
  for (const char* f : {"report.json", "final_model.json", "stage_metrics.csv"})
    EXPECT_EQ(slurp(dir / "pipeline" / f), slurp(dir / "iterate" / f)) << f;

  write_json_file(dir / "eval.json", json{{"model", (model_dir / "model.json").string()},
                                          {"scans", (corpus / "test.json").string()},
                                          {"seed", 123}});
  rerun("evaluate", "evaluate --config " + (dir / "eval.json").string());

  std::string mask_path;
  for (const auto& f : relative_files(corpus))
    if (f.find(".mask.vvol.json") != std::string::npos) {
      mask_path = (corpus / f).string();
      break;
    }
  ASSERT_FALSE(mask_path.empty());
  rerun("morph", "morph --mask " + mask_path);

  write_file(dir / "g1.csv", "scan_id,dsc,iou\na,0.10,0.05\nb,0.11,0.06\nc,0.12,0.07\n");
  write_file(dir / "g2.csv", "scan_id,dsc,iou\na,0.50,0.45\nb,0.51,0.46\nc,0.52,0.47\n");
  write_file(dir / "g3.csv", "scan_id,dsc,iou\na,0.90,0.85\nb,0.91,0.86\nc,0.92,0.87\n");
  write_json_file(dir / "stats.json", json{{"metrics", {"dsc", "iou"}}, {"seed", 0}});
  rerun("stats", "stats --config " + (dir / "stats.json").string() + " --group g1=" + (dir / "g1.csv").string() +
                     " --group g2=" + (dir / "g2.csv").string() + " --group g3=" + (dir / "g3.csv").string());

  write_file(dir / "anno.csv", "3, 2, 1, 1\n0,0,0,0\n5,5,5,1\n");
  rerun("ingest-vessel12",
        "ingest-vessel12 --csv " + (dir / "anno.csv").string() + " --dims 8,8,8 --spacing 0.7,0.7,0.7");
}

TEST(Acceptance, AugmentationContracts) {
  Verdict v("11 augmentation: mirror involution, identity no-op, landmark co-movement, binary masks");
  std::mt19937_64 rng(9011);

  // mirroring twice restores the input exactly, every axis combination
  for (int combo = 1; combo < 8; ++combo) {
    const Dims dims{5, 4, 7};
    const Spacing sp{0.7, 1.0, 0.4};
    const VolumeGrid grid = oracle::random_grid(rng, dims, sp, 0.0f, 100.0f);
    const BinaryMask mask = oracle::random_mask(rng, dims, sp, 0.3);
    WeakDraw d;
    d.mirror_z = combo & 1;
    d.mirror_y = combo & 2;
    d.mirror_x = combo & 4;
    const auto [g1, m1] = apply_weak_with(grid, mask, d);
    const auto [g2, m2] = apply_weak_with(g1, m1, d);
    ASSERT_EQ(g2.voxels, grid.voxels) << "combo " << combo;
    ASSERT_EQ(m2.bits, mask.bits) << "combo " << combo;
  }

  // the identity draw and the degenerate strong family change nothing
  {
    const Dims dims{6, 5, 4};
    const Spacing sp{1.0, 1.0, 1.0};
    const VolumeGrid grid = oracle::random_grid(rng, dims, sp, 0.0f, 100.0f);
    const BinaryMask mask = oracle::random_mask(rng, dims, sp, 0.3);
    const auto [g, m] = apply_weak_with(grid, mask, WeakDraw{});
    EXPECT_EQ(g.voxels, grid.voxels);
    EXPECT_EQ(m.bits, mask.bits);

    AugmentationSpec degenerate;
    degenerate.elastic_sigma_vox = 0.0;
    degenerate.gamma_min = degenerate.gamma_max = 1.0;
    degenerate.seed = 5;
    const auto [gs, ms] = apply_strong(grid, mask, degenerate, 0);
    EXPECT_EQ(gs.voxels, grid.voxels);
    EXPECT_EQ(ms.bits, mask.bits);
  }

  // a compact landmark follows the analytic forward map of every weak draw
  {
    AugmentationSpec spec;
    spec.seed = 3;
    const Dims dims{21, 21, 21};
    const Spacing sp{1.0, 1.0, 1.0};
    VolumeGrid grid(dims, sp);
    BinaryMask mask(dims, sp);
    const std::array<double, 3> landmark{13.0, 8.0, 12.0};
    for (int64_t z = 12; z <= 14; ++z)
      for (int64_t y = 7; y <= 9; ++y)
        for (int64_t x = 11; x <= 13; ++x) {
          grid.at(z, y, x) = 100.0f;
          mask.at(z, y, x) = 1;
        }

    // forward map of the resampler's inverse: p_out = R*(s*M*(p_in-c))+c
    const auto forward = [&](const WeakDraw& d) {
      const double cz = static_cast<double>(dims.nz - 1) / 2.0;
      const double cy = static_cast<double>(dims.ny - 1) / 2.0;
      const double cx = static_cast<double>(dims.nx - 1) / 2.0;
      double sx = (landmark[2] - cx) * sp.dx;
      double sy = (landmark[1] - cy) * sp.dy;
      double sz = (landmark[0] - cz) * sp.dz;
      if (d.mirror_x) sx = -sx;
      if (d.mirror_y) sy = -sy;
      if (d.mirror_z) sz = -sz;
      sx *= d.scale;
      sy *= d.scale;
      sz *= d.scale;
      const detail::Mat3 rot = detail::rotation_matrix(d.angle_z_deg, d.angle_y_deg, d.angle_x_deg);
      const double px = rot[0][0] * sx + rot[0][1] * sy + rot[0][2] * sz;
      const double py = rot[1][0] * sx + rot[1][1] * sy + rot[1][2] * sz;
      const double pz = rot[2][0] * sx + rot[2][1] * sy + rot[2][2] * sz;
      return std::array<double, 3>{pz / sp.dz + cz, py / sp.dy + cy, px / sp.dx + cx};
    };

    for (uint64_t ds = 0; ds < 100; ++ds) {
      const WeakDraw d = draw_weak(spec, ds);
      const auto [g, m] = apply_weak_with(grid, mask, d);
      const std::array<double, 3> want = forward(d);

      double mz = 0, my = 0, mx = 0, count = 0;
      double gz = 0, gy = 0, gx = 0, mass = 0;
      size_t i = 0;
      for (int64_t z = 0; z < dims.nz; ++z)
        for (int64_t y = 0; y < dims.ny; ++y)
          for (int64_t x = 0; x < dims.nx; ++x, ++i) {
            if (m.bits[i]) {
              mz += static_cast<double>(z);
              my += static_cast<double>(y);
              mx += static_cast<double>(x);
              count += 1.0;
            }
            const double w = g.voxels[i];
            gz += w * static_cast<double>(z);
            gy += w * static_cast<double>(y);
            gx += w * static_cast<double>(x);
            mass += w;
          }
      ASSERT_GT(count, 0.0) << "landmark lost at draw " << ds;
      ASSERT_GT(mass, 0.0);
      ASSERT_NEAR(mz / count, want[0], 1.5) << "draw " << ds;
      ASSERT_NEAR(my / count, want[1], 1.5) << "draw " << ds;
      ASSERT_NEAR(mx / count, want[2], 1.5) << "draw " << ds;
      ASSERT_NEAR(gz / mass, want[0], 1.5) << "draw " << ds;
      ASSERT_NEAR(gy / mass, want[1], 1.5) << "draw " << ds;
      ASSERT_NEAR(gx / mass, want[2], 1.5) << "draw " << ds;
    }
  }

  // masks stay strictly binary through both augmentation families
  {
    AugmentationSpec spec;
    spec.seed = 9;
    const Dims dims{10, 10, 10};
    const Spacing sp{1.0, 1.0, 1.0};
    const VolumeGrid grid = oracle::random_grid(rng, dims, sp, 0.0f, 100.0f);
    const BinaryMask mask = oracle::random_mask(rng, dims, sp, 0.3);
    for (uint64_t ds = 0; ds < 20; ++ds) {
      const auto [g, m] = apply_weak(grid, mask, spec, ds);
      for (const uint8_t b : m.bits) ASSERT_LE(b, 1);
      const auto [g2, m2] = apply_strong(g, m, spec, ds);
      for (const uint8_t b : m2.bits) ASSERT_LE(b, 1);
    }
  }
}

}  // namespace
