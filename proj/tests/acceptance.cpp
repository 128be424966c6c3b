// Acceptance suite: one PASS/FAIL line per criterion. Exit status is nonzero
// if any criterion fails.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <json.hpp>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "advbench/adaptive.hpp"
#include "advbench/audit.hpp"
#include "advbench/campaign.hpp"
#include "advbench/data.hpp"
#include "advbench/models.hpp"

using namespace advbench;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

const fs::path& work_dir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / "advbench_acceptance";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

// Desk-scale setup shared by the model-based criteria.
constexpr std::size_t kSide = 16;
constexpr int kClasses = 10;

ModelConfig ensemble_config() {
  ModelConfig c;
  c.side = kSide;
  c.num_classes = kClasses;
  c.resolutions = {16, 8, 4};
  c.block_channels = {8, 16, 16};
  c.heads = 3;
  return c;
}

Dataset train_set(std::uint64_t seed) { return synth_blobs(kClasses, 60, kSide, 100 + seed); }
Dataset test_set(std::uint64_t seed) { return synth_blobs(kClasses, 5, kSide, 900 + seed); }

TrainConfig train_config(std::uint64_t seed) {
  TrainConfig t;
  t.epochs = 10;
  t.learning_rate = 0.003;
  t.batch_size = 32;
  t.seed = seed;
  return t;
}

const EnsembleClassifier& trained_ensemble(std::uint64_t seed) {
  static std::map<std::uint64_t, std::unique_ptr<EnsembleClassifier>> cache;
  auto& slot = cache[seed];
  if (!slot) {
    slot = std::make_unique<EnsembleClassifier>(ensemble_config(), seed);
    train(*slot, train_set(seed), train_config(seed));
  }
  return *slot;
}

// Checkpoint and 10-image dataset on disk for file-based campaigns.
struct DiskSetup {
  fs::path checkpoint;
  fs::path dataset;
};

const DiskSetup& disk_setup() {
  static const DiskSetup s = [] {
    DiskSetup d;
    d.checkpoint = work_dir() / "ensemble.ckpt";
    d.dataset = work_dir() / "test.bin";
    const auto& m = trained_ensemble(0);
    save_model(d.checkpoint, m.config(), m.parameters());
    save_cifar(d.dataset, test_set(0).head(10), CifarVariant::Cifar10);
    return d;
  }();
  return s;
}

CampaignManifest matrix_manifest(ProjectionMode mode, float eps, std::size_t rounds, std::size_t eot,
                                 std::uint64_t seed, const fs::path& out) {
  CampaignManifest m;
  m.checkpoint = disk_setup().checkpoint;
  m.dataset = disk_setup().dataset;
  m.output_dir = out;
  m.adaptive.mode = mode;
  m.adaptive.num_rounds = rounds;
  m.adaptive.force_reattack = true;
  m.adaptive.inner.epsilon = eps;
  m.adaptive.inner.step_size = eps / 4.0f;
  m.adaptive.inner.num_steps = 10;
  m.adaptive.inner.num_eot = eot;
  m.adaptive.inner.eot_max_shift = 2;
  m.adaptive.inner.seed = seed;
  m.audit.epsilon = eps;
  m.audit.tolerance_ulps = 4;
  m.write_png = false;
  return m;
}

struct MatrixConfig {
  float eps;
  std::size_t rounds;
  std::size_t eot;
  std::uint64_t seed;
};

std::vector<MatrixConfig> matrix_configs() {
  std::vector<MatrixConfig> out;
  Rng rng(2024);
  for (int e : {2, 4, 8, 16})
    for (std::size_t r : {1, 5, 20})
      for (std::size_t t : {1, 10}) out.push_back({static_cast<float>(e) / 255.0f, r, t, rng()});
  return out;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------

Verdict budget_soundness() {
  const auto t0 = Clock::now();
  std::size_t campaigns = 0, violations = 0, mismatches = 0, entries = 0;
  for (const auto& c : matrix_configs()) {
    const auto out = work_dir() / ("corrected_" + std::to_string(campaigns));
    std::ostringstream log;
    const auto summary = run_attack(matrix_manifest(ProjectionMode::Corrected, c.eps, c.rounds, c.eot, c.seed, out),
                                    false, log);
    AuditOptions opts;
    opts.epsilon = c.eps;
    opts.tolerance_ulps = 4;
    const auto audit = audit_directory(out / "images", opts);
    violations += audit.violations.size() + summary.violations;
    mismatches += summary.ledger_matches_audit ? 0 : 1;
    entries += audit.ledger.size();
    ++campaigns;
  }
  const double secs = seconds_since(t0);
  Verdict v;
  v.pass = campaigns >= 20 && violations == 0 && mismatches == 0 && secs < 300.0;
  v.detail = std::to_string(campaigns) + " corrected campaigns, " + std::to_string(entries) + " audited entries, " +
             std::to_string(violations) + " violations at 4 ulps, " + std::to_string(mismatches) +
             " ledger/audit mismatches, " + fmt("%.1f s", secs) + " (limit 300 s)";
  return v;
}

Verdict accumulation_law() {
  const auto t0 = Clock::now();
  FixtureRequest req;
  req.out_dir = work_dir() / "fixture";
  req.rounds = 20;
  const auto manifest_path = make_fixture(req);
  auto manifest = CampaignManifest::load(manifest_path);
  std::ostringstream log;
  run_attack(manifest, false, log);
  const auto ledger = PerturbationLedger::from_csv(read_text(manifest.output_dir / "ledger.csv"));
  double worst = 0.0;
  bool complete = ledger.rounds() == 20;
  for (std::size_t n = 1; n <= 20 && complete; ++n) {
    for (const auto& e : ledger.round_entries(n)) worst = std::max(worst, std::abs(e.linf - n * 8.0 / 255.0));
  }
  const double last = complete ? ledger.max_linf(20) : 0.0;
  Verdict v;
  v.pass = complete && worst <= 1e-6 && std::abs(last - 160.0 / 255.0) <= 1e-6;
  v.detail = "max |Linf(n) - 8n/255| = " + fmt("%.3g", worst) + " over n=1..20 (tol 1e-6), Linf(20) = " +
             fmt("%.6f", last * 255.0) + "/255, " + fmt("%.1f s", seconds_since(t0));
  return v;
}

Verdict triangle_envelope() {
  std::size_t entries = 0, breaches = 0, step_breaches = 0, campaigns = 0;
  for (const auto& c : matrix_configs()) {
    const auto out = work_dir() / ("buggy_" + std::to_string(campaigns++));
    std::ostringstream log;
    run_attack(matrix_manifest(ProjectionMode::Buggy, c.eps, c.rounds, c.eot, c.seed, out), false, log);
    const auto ledger = PerturbationLedger::from_csv(read_text(out / "ledger.csv"));
    const double eps = c.eps;
    const double tol = ulp_tolerance(eps, 4);
    std::map<std::size_t, double> prev;
    for (const auto& [key, e] : ledger.entries()) {
      ++entries;
      if (e.linf > e.round * eps + tol) ++breaches;
      // consecutive rounds differ by at most one budget
      if (prev.count(e.sample) && e.linf - prev[e.sample] > eps + ulp_tolerance(eps, 4)) ++step_breaches;
      prev[e.sample] = e.linf;
    }
  }
  Verdict v;
  v.pass = entries >= 1000 && breaches == 0 && step_breaches == 0;
  v.detail = std::to_string(entries) + " buggy ledger entries from " + std::to_string(campaigns) + " campaigns, " +
             std::to_string(breaches) + " above n*eps, " + std::to_string(step_breaches) + " round-to-round steps above eps";
  return v;
}

Verdict pgd_optimality() {
  Rng rng(404);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  std::uniform_int_distribution<int> side_pick(2, 8), eps_pick(1, 16);
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t side = static_cast<std::size_t>(side_pick(rng));
    const float eps = static_cast<float>(eps_pick(rng)) / 255.0f;
    std::vector<float> w(3 * side * side);
    for (auto& x : w) x = normal(rng);
    const float b = normal(rng);
    const auto model = LinearClassifier::binary({3, side, side}, w, b);
    std::uniform_real_distribution<float> u(eps, 1.0f - eps);
    Tensor x({3, side, side});
    for (auto& p : x.values()) p = u(rng);
    AttackConfig cfg;
    cfg.epsilon = eps;
    cfg.step_size = eps / 4.0f;
    cfg.num_steps = 10;
    cfg.num_eot = 1;
    cfg.eot_max_shift = 0;
    cfg.seed = static_cast<std::uint64_t>(trial);
    const std::vector<Tensor> batch{x};
    const std::vector<int> labels{0};
    const auto r = pgd_attack(model, batch, labels, cfg, batch);
    double before = b, after = b, l1 = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      before += static_cast<double>(w[i]) * x[i];
      after += static_cast<double>(w[i]) * r.adversarial[0][i];
      l1 += std::abs(static_cast<double>(w[i]));
    }
    const double optimum = static_cast<double>(eps) * l1;
    worst = std::max(worst, std::abs((before - after) - optimum) / optimum);
  }
  Verdict v;
  v.pass = worst <= 1e-4;
  v.detail = "10 binary linear models, max relative gap to eps*||w||_1 = " + fmt("%.3g", worst) + " (tol 1e-4)";
  return v;
}

Verdict gradient_fidelity() {
  const auto model = trained_ensemble(0).cast<double>();
  const auto data = test_set(0);
  Rng rng(55);
  std::uniform_real_distribution<double> jitter(-0.02, 0.02);
  std::uniform_int_distribution<std::size_t> pick_image(0, data.size() - 1);
  double worst = 0.0;
  std::size_t checked = 0, skipped = 0;
  for (int probe = 0; probe < 10; ++probe) {
    auto x = data.images[pick_image(rng)].cast<double>();
    for (auto& v : x.values()) v = std::clamp(v + jitter(rng), 0.0, 1.0);
    const int label = static_cast<int>(rng() % kClasses);
    BasicTensor<double> grad;
    std::vector<std::size_t> coords(64);
    std::uniform_int_distribution<std::size_t> pick_coord(0, x.size() - 1);
    for (auto& c : coords) c = pick_coord(rng);
    // stay inside [0, 1] for the +-h probes
    for (auto c : coords) x[c] = std::clamp(x[c], 1e-3, 1.0 - 1e-3);
    model.loss_and_gradient(x, label, grad);
    FiniteDifferenceProblem prob{
        [&](const BasicTensor<double>& p) {
          BasicTensor<double> g;
          return model.loss_and_gradient(p, label, g);
        },
        [&](const BasicTensor<double>& p) { return model.activation_pattern(p); }};
    const auto r = finite_difference_check(prob, x, grad, 1e-5, coords);
    worst = std::max(worst, r.max_relative_error);
    checked += r.checked;
    skipped += r.skipped_at_kinks;
  }
  Verdict v;
  v.pass = worst < 1e-3 && checked >= 10 * 32;
  v.detail = "10 probes, " + std::to_string(checked) + " coordinates checked (" + std::to_string(skipped) +
             " skipped at relu kinks), max relative error " + fmt("%.3g", worst) + " (tol 1e-3)";
  return v;
}

Verdict directionality() {
  const auto t0 = Clock::now();
  double mean_ens = 0.0, mean_plain = 0.0;
  bool per_seed_ok = true;
  std::ostringstream detail;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto& ens = trained_ensemble(seed);
    PlainClassifier plain(ensemble_config().as_plain(), seed);
    train(plain, train_set(seed), train_config(seed));
    const auto test = test_set(seed);

    AdaptiveConfig ac;
    ac.num_rounds = 20;
    ac.inner.seed = seed;
    ac.mode = ProjectionMode::Corrected;
    const double corr_ens = adaptive_attack(ens, test, ac).reports.back().success_rate;
    const double corr_plain = adaptive_attack(plain, test, ac).reports.back().success_rate;
    ac.mode = ProjectionMode::Buggy;
    const double bug_ens = adaptive_attack(ens, test, ac).reports.back().success_rate;

    const double acc_corr = 1.0 - corr_ens, acc_bug = 1.0 - bug_ens;
    per_seed_ok = per_seed_ok && acc_bug <= 0.05 && acc_corr > acc_bug && acc_corr >= 1.5 * acc_bug;
    mean_ens += corr_ens / 3.0;
    mean_plain += corr_plain / 3.0;
    detail << " seed " << seed << ": success corrected ens " << fmt("%.2f", corr_ens) << " plain "
           << fmt("%.2f", corr_plain) << ", adv acc corrected " << fmt("%.2f", acc_corr) << " buggy "
           << fmt("%.2f", acc_bug) << ";";
  }
  const double secs = seconds_since(t0);
  Verdict v;
  v.pass = mean_ens < mean_plain && per_seed_ok && secs < 900.0;
  v.detail = "mean corrected success ens " + fmt("%.3f", mean_ens) + " vs plain " + fmt("%.3f", mean_plain) + ";" +
             detail.str() + " " + fmt("%.0f s", secs) + " (limit 900 s)";
  return v;
}

Verdict reduction_identities() {
  const auto& ens = trained_ensemble(0);
  const auto data = test_set(0);
  AdaptiveConfig ac;
  ac.num_rounds = 1;
  ac.inner.num_steps = 10;
  ac.inner.num_eot = 2;
  ac.mode = ProjectionMode::Buggy;
  const auto bug = adaptive_attack(ens, data, ac);
  ac.mode = ProjectionMode::Corrected;
  const auto cor = adaptive_attack(ens, data, ac);
  bool rounds_one = bug.success == cor.success;
  for (std::size_t i = 0; i < data.size(); ++i) rounds_one = rounds_one && bug.final_images[i] == cor.final_images[i];

  ac.num_rounds = 3;
  ac.force_reattack = true;
  ac.inner.epsilon = 0.0f;
  ac.inner.step_size = 1.0f / 1020.0f;
  const auto zero = adaptive_attack(ens, data, ac);
  bool eps_zero = true;
  for (std::size_t i = 0; i < data.size(); ++i) eps_zero = eps_zero && zero.final_images[i] == data.images[i];

  auto single = ensemble_config();
  single.resolutions = {kSide};
  single.heads = 1;
  EnsembleClassifier one(single, 3);
  train(one, train_set(0).head(100), train_config(0));
  PlainClassifier plain(single.as_plain(), one.parameters());
  std::size_t differing = 0;
  for (const auto& img : data.images)
    if (one.logits(img) != plain.logits(img)) ++differing;

  Verdict v;
  v.pass = rounds_one && eps_zero && differing == 0;
  v.detail = std::string("rounds=1 buggy==corrected bitwise: ") + (rounds_one ? "yes" : "no") +
             ", eps=0 output==input: " + (eps_zero ? "yes" : "no") + ", K=1,H=1 vs plain: " +
             std::to_string(differing) + "/" + std::to_string(data.size()) + " images differ (0 ulp required)";
  return v;
}

Verdict cifar_loader() {
  bool ok = true;
  std::string why;
  for (auto variant : {CifarVariant::Cifar10, CifarVariant::Cifar100}) {
    const std::size_t lb = cifar_label_bytes(variant), record = lb + 3072;
    std::vector<unsigned char> bytes(3 * record);
    for (std::size_t r = 0; r < 3; ++r) {
      unsigned char* rec = bytes.data() + r * record;
      if (variant == CifarVariant::Cifar100) {
        rec[0] = static_cast<unsigned char>(5 + r);   // coarse
        rec[1] = static_cast<unsigned char>(97 + r);  // fine
      } else {
        rec[0] = static_cast<unsigned char>(r * 4 + 1);
      }
      for (std::size_t i = 0; i < 3072; ++i) rec[lb + i] = static_cast<unsigned char>((i * 31 + r * 7) & 0xff);
    }
    const auto in = work_dir() / (std::string("fixture_") + variant_name(variant) + ".bin");
    const auto out = work_dir() / (std::string("roundtrip_") + variant_name(variant) + ".bin");
    {
      std::ofstream f(in, std::ios::binary);
      f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    }
    const auto d = load_cifar(in, variant);
    const bool spot = d.size() == 3 &&
                      d.images[1].at(2, 31, 31) == static_cast<float>((3071 * 31 + 7) & 0xff) / 255.0f &&
                      d.labels[2] == (variant == CifarVariant::Cifar100 ? 99 : 9) &&
                      (variant == CifarVariant::Cifar10 || d.coarse_labels[0] == 5);
    save_cifar(out, d, variant);
    const bool exact = read_text(in) == read_text(out);
    if (!spot || !exact) {
      ok = false;
      why += std::string(" ") + variant_name(variant) + (spot ? "" : " decode") + (exact ? "" : " round-trip");
    }

    fs::resize_file(in, 2 * record + 1000);
    const std::string expect = "byte offset " + std::to_string(2 * record);
    try {
      load_cifar(in, variant);
      ok = false;
      why += std::string(" ") + variant_name(variant) + " truncation accepted";
    } catch (const std::runtime_error& e) {
      if (std::string(e.what()).find(expect) == std::string::npos) {
        ok = false;
        why += std::string(" ") + variant_name(variant) + " diagnostic: " + e.what();
      }
    }
  }
  Verdict v;
  v.pass = ok;
  v.detail = ok ? "cifar10 and cifar100 3-record fixtures round-trip bit-exact; truncated files rejected at the "
                  "record's byte offset"
                : "failures:" + why;
  return v;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(ADVBENCH_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Verdict determinism() {
  auto m = matrix_manifest(ProjectionMode::Corrected, 8.0f / 255.0f, 3, 4, 77, work_dir() / "unused");
  m.adaptive.force_reattack = false;
  m.adaptive.inner.random_start = true;
  m.write_png = true;
  const auto manifest_path = work_dir() / "determinism.json";
  {
    std::ofstream f(manifest_path);
    f << m.to_json();
  }
  std::vector<nlohmann::json> digests;
  for (int jobs : {1, 1, 3}) {
    const auto out = work_dir() / ("determinism_" + std::to_string(digests.size()));
    if (run_cli("attack --manifest " + manifest_path.string() + " --out " + out.string() + " --jobs " +
                std::to_string(jobs)) != 0) {
      return {false, "cli attack failed with --jobs " + std::to_string(jobs)};
    }
    digests.push_back(nlohmann::json::parse(read_text(out / "manifest.json"))["artifacts"]);
  }
  Verdict v;
  v.pass = digests[0] == digests[1] && digests[0] == digests[2] && digests[0].size() == 3;
  v.detail = "ledger/report/images digests over reruns with --jobs 1, 1, 3: " +
             std::string(v.pass ? "identical" : "differ") + " (images " +
             digests[0].value("images", std::string("?")).substr(0, 16) + "...)";
  return v;
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria{
      {"budget soundness", budget_soundness},
      {"accumulation law", accumulation_law},
      {"triangle envelope", triangle_envelope},
      {"pgd optimality", pgd_optimality},
      {"gradient fidelity", gradient_fidelity},
      {"defense directionality", directionality},
      {"reduction identities", reduction_identities},
      {"cifar loader", cifar_loader},
      {"determinism", determinism},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    if (!v.pass) ++failures;
    std::cout << (v.pass ? "PASS" : "FAIL") << " [" << i + 1 << "] " << criteria[i].first << ": " << v.detail
              << std::endl;
  }
  fs::remove_all(work_dir());
  return failures == 0 ? 0 : 1;
}
