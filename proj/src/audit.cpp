#include "advbench/audit.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>

#include "advbench/checkpoint.hpp"
#include "advbench/data.hpp"

namespace advbench {

namespace fs = std::filesystem;

double linf(const Tensor& original, const Tensor& perturbed) {
  if (original.shape() != perturbed.shape()) {
    throw std::invalid_argument("linf: shape mismatch " + shape_string(original.shape()) + " vs " +
                                shape_string(perturbed.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < original.size(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(perturbed[i]) - static_cast<double>(original[i])));
  }
  return m;
}

double l2(const Tensor& original, const Tensor& perturbed) {
  if (original.shape() != perturbed.shape()) throw std::invalid_argument("l2: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < original.size(); ++i) {
    const double d = static_cast<double>(perturbed[i]) - static_cast<double>(original[i]);
    s += d * d;
  }
  return std::sqrt(s);
}

double ulp_tolerance(double epsilon, int ulps) {
  const float f = static_cast<float>(epsilon);
  const double ulp = static_cast<double>(std::nextafter(f, std::numeric_limits<float>::infinity())) - static_cast<double>(f);
  return ulps * ulp;
}

// ---------------------------------------------------------------------------
// Ledger

void PerturbationLedger::add(const LedgerEntry& e) {
  if (e.round == 0) throw std::invalid_argument("ledger: rounds are 1-based");
  if (!(e.linf >= 0.0 && e.linf <= 1.0) || !(e.l2 >= 0.0)) {
    throw std::invalid_argument("ledger: norms out of range for sample " + std::to_string(e.sample) + " round " +
                                std::to_string(e.round));
  }
  if (!entries_.emplace(std::make_pair(e.round, e.sample), e).second) {
    throw std::invalid_argument("ledger: duplicate entry for sample " + std::to_string(e.sample) + " round " +
                                std::to_string(e.round));
  }
}

std::size_t PerturbationLedger::rounds() const {
  std::set<std::size_t> seen;
  for (const auto& [key, e] : entries_) seen.insert(key.first);
  std::size_t expected = 1;
  for (std::size_t r : seen) {
    if (r != expected) throw std::runtime_error("ledger: rounds not contiguous, missing round " + std::to_string(expected));
    ++expected;
  }
  return seen.size();
}

std::vector<LedgerEntry> PerturbationLedger::round_entries(std::size_t round) const {
  std::vector<LedgerEntry> out;
  for (auto it = entries_.lower_bound({round, 0}); it != entries_.end() && it->first.first == round; ++it) {
    out.push_back(it->second);
  }
  return out;
}

double PerturbationLedger::max_linf(std::size_t round) const {
  double m = 0.0;
  for (const auto& e : round_entries(round)) m = std::max(m, e.linf);
  return m;
}

std::string PerturbationLedger::to_csv() const {
  std::string out = "sample_id,round,linf,l2,success\n";
  char buf[160];
  for (const auto& [key, e] : entries_) {
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.17g,%.17g,%d\n", e.sample, e.round, e.linf, e.l2, e.success ? 1 : 0);
    out += buf;
  }
  return out;
}

PerturbationLedger PerturbationLedger::from_csv(const std::string& text, CampaignMeta meta) {
  PerturbationLedger ledger(std::move(meta));
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1 || line.empty()) continue;
    std::istringstream row(line);
    std::string f[5];
    for (auto& field : f) {
      if (!std::getline(row, field, ',')) throw std::runtime_error("ledger csv: short row at line " + std::to_string(lineno));
    }
    LedgerEntry e;
    e.sample = std::stoull(f[0]);
    e.round = std::stoull(f[1]);
    e.linf = std::stod(f[2]);
    e.l2 = std::stod(f[3]);
    e.success = f[4] == "1";
    ledger.add(e);
  }
  return ledger;
}

// ---------------------------------------------------------------------------
// Checks

std::vector<Violation> verify_budget(const PerturbationLedger& ledger, double epsilon, double tolerance) {
  std::vector<Violation> out;
  for (const auto& [key, e] : ledger.entries()) {
    if (e.linf > epsilon + tolerance) {
      out.push_back({e.sample, e.round, e.linf, epsilon > 0.0 ? e.linf / epsilon : std::numeric_limits<double>::infinity()});
    }
  }
  return out;
}

GrowthFit fit_growth_law(const PerturbationLedger& ledger) {
  const std::size_t rounds = ledger.rounds();
  if (rounds < 2) throw std::invalid_argument("fit_growth_law: need at least 2 rounds, got " + std::to_string(rounds));
  double num = 0.0, den = 0.0;
  for (std::size_t n = 1; n <= rounds; ++n) {
    const double x = static_cast<double>(n);
    num += x * ledger.max_linf(n);
    den += x * x;
  }
  GrowthFit fit;
  fit.slope = num / den;
  double ss = 0.0;
  for (std::size_t n = 1; n <= rounds; ++n) {
    const double r = ledger.max_linf(n) - fit.slope * static_cast<double>(n);
    ss += r * r;
  }
  fit.residual = std::sqrt(ss / static_cast<double>(rounds));
  return fit;
}

std::vector<RoundReport> round_reports(const PerturbationLedger& ledger, double epsilon, double tolerance) {
  std::vector<RoundReport> out;
  std::set<std::size_t> rounds;
  for (const auto& [key, e] : ledger.entries()) rounds.insert(key.first);
  for (std::size_t n : rounds) {
    RoundReport r;
    r.round = n;
    double sum = 0.0;
    std::size_t successes = 0;
    for (const auto& e : ledger.round_entries(n)) {
      ++r.samples;
      sum += e.linf;
      r.max_linf = std::max(r.max_linf, e.linf);
      successes += e.success ? 1 : 0;
      r.violations += e.linf > epsilon + tolerance ? 1 : 0;
    }
    if (r.samples > 0) {
      r.mean_linf = sum / static_cast<double>(r.samples);
      r.success_rate = static_cast<double>(successes) / static_cast<double>(r.samples);
    }
    out.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Directory audit

std::string sample_file_name(std::size_t sample, const char* extension) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "sample_%06zu%s", sample, extension);
  return buf;
}

std::string round_dir_name(std::size_t round) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "round_%03zu", round);
  return buf;
}

namespace {

std::optional<std::size_t> parse_suffix_number(const std::string& name, const std::string& prefix,
                                                const std::string& suffix) {
  if (name.size() <= prefix.size() + suffix.size() || name.compare(0, prefix.size(), prefix) != 0 ||
      name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0) {
    return std::nullopt;
  }
  const char* first = name.data() + prefix.size();
  const char* last = name.data() + name.size() - suffix.size();
  std::size_t value = 0;
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) return std::nullopt;
  return value;
}

std::map<std::size_t, fs::path> sidecars(const fs::path& dir) {
  std::map<std::size_t, fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    if (auto id = parse_suffix_number(entry.path().filename().string(), "sample_", ".f32")) out.emplace(*id, entry.path());
  }
  return out;
}

std::map<std::size_t, bool> read_flags(const fs::path& file) {
  std::map<std::size_t, bool> flags;
  std::ifstream in(file);
  if (!in) return flags;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    const auto comma = line.find(',');
    if (comma == std::string::npos) continue;
    flags[std::stoull(line.substr(0, comma))] = line.substr(comma + 1) == "1";
  }
  return flags;
}

}  // namespace

DirectoryAudit audit_directory(const fs::path& dir, const AuditOptions& opts) {
  if (!fs::is_directory(dir / "original")) {
    throw std::runtime_error("audit: " + (dir / "original").string() + " is not a directory");
  }
  DirectoryAudit audit;
  audit.tolerance = ulp_tolerance(opts.epsilon, opts.tolerance_ulps);
  audit.ledger.meta().epsilon = opts.epsilon;

  const auto originals = sidecars(dir / "original");
  std::map<std::size_t, fs::path> round_dirs;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_directory()) continue;
    if (auto r = parse_suffix_number(entry.path().filename().string(), "round_", "")) round_dirs.emplace(*r, entry.path());
  }

  std::map<std::size_t, Tensor> original_cache;
  auto load_original = [&](std::size_t id) -> const Tensor& {
    auto it = original_cache.find(id);
    if (it == original_cache.end()) {
      Tensor t = load_raw_tensor(originals.at(id));
      if (opts.quantize_8bit) t = quantize_8bit(t);
      it = original_cache.emplace(id, std::move(t)).first;
    }
    return it->second;
  };

  for (const auto& [round, rdir] : round_dirs) {
    const auto adv = sidecars(rdir);
    const auto flags = read_flags(rdir / "flags.csv");
    const std::string rname = rdir.filename().string();
    for (const auto& [id, path] : adv) {
      if (!originals.count(id)) audit.orphans.push_back(rname + "/" + path.filename().string());
    }
    for (const auto& [id, path] : originals) {
      if (!adv.count(id)) {
        audit.orphans.push_back("original/" + path.filename().string() + " (no counterpart in " + rname + ")");
      }
    }
    for (const auto& [id, path] : adv) {
      if (!originals.count(id)) continue;
      Tensor perturbed = load_raw_tensor(path);
      if (opts.quantize_8bit) perturbed = quantize_8bit(perturbed);
      const Tensor& original = load_original(id);
      LedgerEntry e;
      e.sample = id;
      e.round = round;
      e.linf = linf(original, perturbed);
      e.l2 = l2(original, perturbed);
      auto f = flags.find(id);
      e.success = f != flags.end() && f->second;
      audit.ledger.add(e);
    }
  }

  audit.violations = verify_budget(audit.ledger, opts.epsilon, audit.tolerance);
  audit.reports = round_reports(audit.ledger, opts.epsilon, audit.tolerance);
  if (audit.ledger.rounds() >= 2) audit.growth = fit_growth_law(audit.ledger);
  return audit;
}

}  // namespace advbench
