#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "advbench/tensor.hpp"

namespace advbench {

/// max |perturbed - original| over coordinates, in 64-bit.
double linf(const Tensor& original, const Tensor& perturbed);
/// Euclidean distance, in 64-bit.
double l2(const Tensor& original, const Tensor& perturbed);

/// `ulps` units in the last place of float(epsilon).
double ulp_tolerance(double epsilon, int ulps);

struct LedgerEntry {
  std::size_t sample = 0;
  std::size_t round = 0;  // 1-based
  double linf = 0.0;
  double l2 = 0.0;
  bool success = false;
};

struct CampaignMeta {
  double epsilon = 8.0 / 255.0;
  std::string mode;
  std::uint64_t seed = 0;
};

/// Per-sample, per-round distances to the pristine originals.
class PerturbationLedger {
 public:
  PerturbationLedger() = default;
  explicit PerturbationLedger(CampaignMeta meta) : meta_(std::move(meta)) {}

  /// Rejects duplicate (sample, round) keys, round 0, and norms outside
  /// [0, 1] (L-inf) or negative (L2).
  void add(const LedgerEntry& e);

  const CampaignMeta& meta() const noexcept { return meta_; }
  CampaignMeta& meta() noexcept { return meta_; }
  const std::map<std::pair<std::size_t, std::size_t>, LedgerEntry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }

  /// Highest round recorded. Throws unless rounds are contiguous from 1.
  std::size_t rounds() const;
  std::vector<LedgerEntry> round_entries(std::size_t round) const;
  double max_linf(std::size_t round) const;

  /// CSV with header sample_id,round,linf,l2,success; round-major order.
  std::string to_csv() const;
  static PerturbationLedger from_csv(const std::string& text, CampaignMeta meta = {});

 private:
  CampaignMeta meta_;
  // keyed (round, sample) so iteration is round-major
  std::map<std::pair<std::size_t, std::size_t>, LedgerEntry> entries_;
};

struct Violation {
  std::size_t sample = 0;
  std::size_t round = 0;
  double linf = 0.0;
  double factor = 0.0;  // linf / epsilon
};

/// Every entry with L-inf > epsilon + tolerance.
std::vector<Violation> verify_budget(const PerturbationLedger& ledger, double epsilon, double tolerance);

struct GrowthFit {
  double slope = 0.0;     // intensity units per round
  double residual = 0.0;  // RMS of max_linf(n) - slope * n
};

/// Least-squares line through the origin of per-round max L-inf against round.
GrowthFit fit_growth_law(const PerturbationLedger& ledger);

struct RoundReport {
  std::size_t round = 0;
  std::size_t samples = 0;
  double max_linf = 0.0;
  double mean_linf = 0.0;
  double success_rate = 0.0;
  std::size_t violations = 0;
};

std::vector<RoundReport> round_reports(const PerturbationLedger& ledger, double epsilon, double tolerance);

// Campaign image directory layout shared by the writer and the auditor:
//   <dir>/original/sample_NNNNNN.f32   pristine images
//   <dir>/round_RRR/sample_NNNNNN.f32  adversarial images after round R
//   <dir>/round_RRR/flags.csv          sample_id,success (optional)
// PNG files next to the sidecars are for viewing and are ignored here.
std::string sample_file_name(std::size_t sample, const char* extension = ".f32");
std::string round_dir_name(std::size_t round);

struct DirectoryAudit {
  PerturbationLedger ledger;
  std::vector<Violation> violations;
  std::optional<GrowthFit> growth;  // present with >= 2 rounds
  std::vector<RoundReport> reports;
  std::vector<std::string> orphans;  // unpaired files, relative to the directory
  double tolerance = 0.0;
};

struct AuditOptions {
  double epsilon = 8.0 / 255.0;
  int tolerance_ulps = 4;
  bool quantize_8bit = false;  // round both images to 8 bits before measuring
};

/// Recomputes every norm from the sidecar files on disk.
DirectoryAudit audit_directory(const std::filesystem::path& dir, const AuditOptions& opts);

}  // namespace advbench
