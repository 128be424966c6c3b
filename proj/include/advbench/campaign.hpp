#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "advbench/adaptive.hpp"
#include "advbench/audit.hpp"
#include "advbench/data.hpp"
#include "advbench/models.hpp"

namespace advbench {

/// Parses "8/255", "0.03" or "3e-2".
double parse_fraction(const std::string& text);

/// Hex SHA-256 of a file.
std::string sha256_file(const std::filesystem::path& path);
/// Hex SHA-256 over every regular file under `dir`, in path order, keyed by
/// relative path.
std::string sha256_tree(const std::filesystem::path& dir);

CifarVariant parse_variant(const std::string& s);
const char* variant_name(CifarVariant v);

// ---------------------------------------------------------------------------
// train

struct TrainRequest {
  ModelConfig model;
  std::filesystem::path dataset;
  CifarVariant variant = CifarVariant::Cifar10;
  TrainConfig train;
  std::uint64_t init_seed = 0;
  std::filesystem::path checkpoint;  // output
};

struct TrainSummary {
  double final_accuracy = 0.0;
  std::string checkpoint_digest;
};

/// Trains and writes the checkpoint plus `<checkpoint>.log.json`.
TrainSummary run_train(const TrainRequest& req, std::ostream& log);

// ---------------------------------------------------------------------------
// attack

struct CampaignManifest {
  std::filesystem::path checkpoint;
  std::filesystem::path dataset;
  CifarVariant variant = CifarVariant::Cifar10;
  std::filesystem::path output_dir;
  std::size_t limit = 0;  // first N samples; 0 = all
  AdaptiveConfig adaptive;
  AuditOptions audit;  // epsilon is taken from the attack config
  bool write_png = true;

  std::string to_json() const;
  static CampaignManifest from_json(const std::string& text, const std::filesystem::path& base_dir = {});
  static CampaignManifest load(const std::filesystem::path& path);
};

struct AttackSummary {
  std::size_t samples = 0;
  double clean_accuracy = 0.0;
  double adversarial_accuracy = 0.0;
  double max_linf = 0.0;
  std::size_t violations = 0;
  bool ledger_matches_audit = true;
  std::string ledger_digest;
  std::string report_digest;
  std::string images_digest;
};

inline constexpr int kReportSchemaVersion = 1;

/// Runs the campaign, writes images (PNG + float32 sidecars) after every
/// round, then audits the written files and emits ledger.csv, report.json
/// and manifest.json. With `resume`, continues from the last complete round
/// found under the output directory.
AttackSummary run_attack(const CampaignManifest& manifest, bool resume, std::ostream& log);

// ---------------------------------------------------------------------------
// audit

struct AuditSummary {
  DirectoryAudit audit;
  int exit_code = 0;  // 0 clean, 1 budget violations, 2 unpaired files
};

/// Audits `images_dir`; optionally writes the JSON summary to `report`.
AuditSummary run_audit(const std::filesystem::path& images_dir, const AuditOptions& opts,
                       const std::optional<std::filesystem::path>& report, std::ostream& log);

std::string audit_report_json(const DirectoryAudit& audit, const AuditOptions& opts);

// ---------------------------------------------------------------------------
// dump

struct DumpRequest {
  std::filesystem::path campaign_dir;
  std::vector<std::size_t> samples;
  double amplification = 255.0 / 16.0;
  std::optional<std::size_t> round;  // default: last round on disk
  std::filesystem::path out_dir;     // default: <campaign>/figures
};

/// Writes <id>_original.png, <id>_adversarial.png, <id>_difference.png.
std::vector<std::filesystem::path> run_dump(const DumpRequest& req);

// ---------------------------------------------------------------------------
// fixture

struct FixtureRequest {
  std::filesystem::path out_dir;
  std::size_t samples = 4;
  std::size_t side = 8;
  std::size_t channels = 3;
  std::size_t rounds = 20;
  std::uint64_t seed = 0;
  ProjectionMode mode = ProjectionMode::Buggy;
};

/// Saturating fixture: a binary linear model, mid-gray images and a
/// forced-re-attack campaign manifest. The clamp box is widened to
/// [-1, 2] so that n * epsilon growth stays exact for 20 rounds.
std::filesystem::path make_fixture(const FixtureRequest& req);

}  // namespace advbench
