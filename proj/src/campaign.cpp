#include "advbench/campaign.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "advbench/checkpoint.hpp"
#include "advbench/image_io.hpp"
#include "advbench/parallel.hpp"

namespace advbench {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

double parse_fraction(const std::string& text) {
  auto parse = [&](const std::string& s) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != s.size()) throw std::invalid_argument("cannot parse number '" + text + "'");
    return v;
  };
  const auto slash = text.find('/');
  if (slash == std::string::npos) return parse(text);
  const double den = parse(text.substr(slash + 1));
  if (den == 0.0) throw std::invalid_argument("zero denominator in '" + text + "'");
  return parse(text.substr(0, slash)) / den;
}

namespace {

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new(), &EVP_MD_CTX_free) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) throw std::runtime_error("sha256 init failed");
  }
  void update(const void* data, std::size_t n) {
    if (EVP_DigestUpdate(ctx_.get(), data, n) != 1) throw std::runtime_error("sha256 update failed");
  }
  void update(const std::string& s) { update(s.data(), s.size()); }
  void update_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    char buf[1 << 16];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) update(buf, static_cast<std::size_t>(in.gcount()));
  }
  std::string hex() {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_.get(), md, &len);
    std::string out;
    char b[3];
    for (unsigned int i = 0; i < len; ++i) {
      std::snprintf(b, sizeof b, "%02x", md[i]);
      out += b;
    }
    return out;
  }

 private:
  std::unique_ptr<EVP_MD_CTX, void (*)(EVP_MD_CTX*)> ctx_;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

std::string sha256_file(const fs::path& path) {
  Sha256 h;
  h.update_file(path);
  return h.hex();
}

std::string sha256_tree(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  Sha256 h;
  for (const auto& f : files) {
    h.update(fs::relative(f, dir).generic_string());
    h.update("\n", 1);
    h.update(sha256_file(f));
  }
  return h.hex();
}

CifarVariant parse_variant(const std::string& s) {
  if (s == "cifar10") return CifarVariant::Cifar10;
  if (s == "cifar100") return CifarVariant::Cifar100;
  throw std::invalid_argument("unknown dataset variant '" + s + "' (expected cifar10 or cifar100)");
}

const char* variant_name(CifarVariant v) { return v == CifarVariant::Cifar10 ? "cifar10" : "cifar100"; }

namespace {

ImageGeometry geometry_of(const Shape& s) { return {s.at(0), s.at(1), s.at(2)}; }

Dataset load_dataset(const fs::path& path, CifarVariant variant, const ImageGeometry& geometry) {
  if (!fs::exists(path)) throw std::runtime_error("dataset not found: " + path.string());
  return load_cifar(path, variant, geometry);
}

}  // namespace

// ---------------------------------------------------------------------------
// train

TrainSummary run_train(const TrainRequest& req, std::ostream& log) {
  req.model.validate();
  req.train.validate();
  const Dataset data = load_dataset(req.dataset, req.variant, {req.model.channels, req.model.side, req.model.side});
  if (data.empty()) throw std::runtime_error("dataset is empty: " + req.dataset.string());
  auto model = make_conv_model(req.model, req.init_seed);
  log << "training " << req.model.kind << " on " << data.size() << " samples for " << req.train.epochs << " epochs\n";
  const TrainResult tr = train(*model, data, req.train);
  save_model(req.checkpoint, req.model, model->parameters());

  TrainSummary summary;
  summary.final_accuracy = tr.final_accuracy;
  summary.checkpoint_digest = sha256_file(req.checkpoint);

  json j;
  j["model"] = json::parse(req.model.to_json());
  j["train"] = {{"epochs", req.train.epochs},       {"learning_rate", req.train.learning_rate},
                {"batch_size", req.train.batch_size}, {"beta1", req.train.beta1},
                {"seed", req.train.seed},           {"init_seed", req.init_seed}};
  j["dataset"] = req.dataset.string();
  j["epoch_loss"] = tr.epoch_loss;
  j["final_accuracy"] = tr.final_accuracy;
  j["checkpoint_sha256"] = summary.checkpoint_digest;
  write_text(fs::path(req.checkpoint.string() + ".log.json"), j.dump(2) + "\n");
  log << "final train accuracy " << tr.final_accuracy << ", checkpoint " << req.checkpoint.string() << "\n";
  return summary;
}

// ---------------------------------------------------------------------------
// manifest

std::string CampaignManifest::to_json() const {
  const AttackConfig& a = adaptive.inner;
  json j;
  j["checkpoint"] = checkpoint.string();
  j["dataset"] = dataset.string();
  j["dataset_variant"] = variant_name(variant);
  j["output_dir"] = output_dir.string();
  j["limit"] = limit;
  j["mode"] = mode_name(adaptive.mode);
  j["num_rounds"] = adaptive.num_rounds;
  j["bs"] = adaptive.batch_size;
  j["force_reattack"] = adaptive.force_reattack;
  j["epsilon"] = static_cast<double>(a.epsilon);
  j["step_size"] = static_cast<double>(a.step_size);
  j["pgd_steps"] = a.num_steps;
  j["num_eot"] = a.num_eot;
  j["eot_shift"] = a.eot_max_shift;
  j["clamp"] = {static_cast<double>(a.clamp_lo), static_cast<double>(a.clamp_hi)};
  j["seed"] = a.seed;
  j["random_start"] = a.random_start;
  j["audit"] = {{"tolerance_ulps", audit.tolerance_ulps}, {"quantize_8bit", audit.quantize_8bit}};
  j["write_png"] = write_png;
  return j.dump(2);
}

CampaignManifest CampaignManifest::from_json(const std::string& text, const fs::path& base_dir) {
  const auto j = nlohmann::json::parse(text);
  CampaignManifest m;
  auto path_field = [&](const char* key) -> fs::path {
    if (!j.contains(key)) return {};
    fs::path p = j.at(key).get<std::string>();
    return (p.is_relative() && !base_dir.empty()) ? base_dir / p : p;
  };
  auto number = [&](const char* key, double fallback) {
    if (!j.contains(key) || j.at(key).is_null()) return fallback;
    const auto& v = j.at(key);
    return v.is_string() ? parse_fraction(v.get<std::string>()) : v.get<double>();
  };
  m.checkpoint = path_field("checkpoint");
  m.dataset = path_field("dataset");
  m.output_dir = path_field("output_dir");
  m.variant = parse_variant(j.value("dataset_variant", std::string("cifar10")));
  m.limit = j.value("limit", std::size_t{0});
  m.adaptive.mode = parse_mode(j.value("mode", std::string("corrected")));
  m.adaptive.num_rounds = j.value("num_rounds", m.adaptive.num_rounds);
  m.adaptive.batch_size = j.value("bs", m.adaptive.batch_size);
  m.adaptive.force_reattack = j.value("force_reattack", false);
  AttackConfig& a = m.adaptive.inner;
  a.epsilon = static_cast<float>(number("epsilon", 8.0 / 255.0));
  const double default_step = a.epsilon > 0.0f ? static_cast<double>(a.epsilon) / 4.0 : 1.0 / 1020.0;
  a.step_size = static_cast<float>(number("step_size", default_step));
  a.num_steps = j.value("pgd_steps", a.num_steps);
  a.num_eot = j.value("num_eot", a.num_eot);
  a.eot_max_shift = j.value("eot_shift", a.eot_max_shift);
  if (j.contains("clamp")) {
    a.clamp_lo = j.at("clamp").at(0).get<float>();
    a.clamp_hi = j.at("clamp").at(1).get<float>();
  }
  a.seed = j.value("seed", std::uint64_t{0});
  a.random_start = j.value("random_start", false);
  if (j.contains("audit")) {
    m.audit.tolerance_ulps = j.at("audit").value("tolerance_ulps", 4);
    m.audit.quantize_8bit = j.at("audit").value("quantize_8bit", false);
  }
  m.write_png = j.value("write_png", true);
  m.adaptive.validate();
  return m;
}

CampaignManifest CampaignManifest::load(const fs::path& path) {
  return from_json(read_text(path), path.parent_path());
}

// ---------------------------------------------------------------------------
// attack

namespace {

void write_image_pair(const fs::path& dir, std::size_t id, const Tensor& img, bool png) {
  save_raw_tensor(dir / sample_file_name(id), img);
  if (png && (img.dim(0) == 1 || img.dim(0) == 3)) write_png(dir / sample_file_name(id, ".png"), img);
}

void write_round(const fs::path& images_dir, std::size_t round, const CampaignState& state, bool png, std::size_t jobs) {
  const fs::path dir = images_dir / round_dir_name(round);
  fs::create_directories(dir);
  parallel_for(state.current_adv.size(), jobs, [&](std::size_t i) { write_image_pair(dir, i, state.current_adv[i], png); });
  // flags.csv is written last; its presence marks the round as complete.
  std::string flags = "sample_id,success\n";
  for (std::size_t i = 0; i < state.success.size(); ++i) {
    flags += std::to_string(i) + "," + (state.success[i] ? "1" : "0") + "\n";
  }
  write_text(dir / "flags.csv", flags);
}

std::size_t last_complete_round(const fs::path& images_dir) {
  std::size_t r = 0;
  while (fs::exists(images_dir / round_dir_name(r + 1) / "flags.csv")) ++r;
  return r;
}

void restore_state(const fs::path& images_dir, std::size_t round, CampaignState& state) {
  const fs::path dir = images_dir / round_dir_name(round);
  for (std::size_t i = 0; i < state.originals.size(); ++i) {
    Tensor t = load_raw_tensor(dir / sample_file_name(i));
    if (t.shape() != state.originals[i].shape()) throw std::runtime_error("resume: shape mismatch in " + dir.string());
    state.current_adv[i] = std::move(t);
  }
  std::istringstream flags(read_text(dir / "flags.csv"));
  std::string line;
  std::getline(flags, line);
  while (std::getline(flags, line)) {
    const auto comma = line.find(',');
    const std::size_t id = std::stoull(line.substr(0, comma));
    if (id >= state.success.size()) throw std::runtime_error("resume: unknown sample in flags.csv");
    state.success[id] = line.substr(comma + 1) == "1" ? 1 : 0;
  }
  state.rounds_completed = round;
}

json reports_json(const std::vector<RoundReport>& reports) {
  json arr = json::array();
  for (const auto& r : reports) {
    arr.push_back({{"round", r.round},
                   {"samples", r.samples},
                   {"success_rate", r.success_rate},
                   {"max_linf", r.max_linf},
                   {"mean_linf", r.mean_linf},
                   {"violations", r.violations}});
  }
  return arr;
}

json violations_json(const std::vector<Violation>& violations) {
  json arr = json::array();
  for (const auto& v : violations) {
    arr.push_back({{"sample", v.sample}, {"round", v.round}, {"linf", v.linf}, {"factor", v.factor}});
  }
  return arr;
}

}  // namespace

AttackSummary run_attack(const CampaignManifest& manifest, bool resume, std::ostream& log) {
  const AdaptiveConfig& cfg = manifest.adaptive;
  cfg.validate();
  if (manifest.output_dir.empty()) throw std::invalid_argument("attack: no output directory");
  if (!fs::exists(manifest.checkpoint)) throw std::runtime_error("checkpoint not found: " + manifest.checkpoint.string());
  const auto model = load_model(manifest.checkpoint);
  Dataset data = load_dataset(manifest.dataset, manifest.variant, geometry_of(model->input_shape()));
  if (manifest.limit > 0) data = data.head(manifest.limit);
  if (data.empty()) throw std::runtime_error("attack: no samples to attack");

  const fs::path out = manifest.output_dir;
  const fs::path images = out / "images";
  fs::create_directories(out);
  std::size_t resume_round = resume && fs::exists(images) ? last_complete_round(images) : 0;
  if (resume_round == 0 && fs::exists(images)) fs::remove_all(images);
  for (std::size_t r = resume_round + 1; fs::exists(images / round_dir_name(r)); ++r) {
    fs::remove_all(images / round_dir_name(r));  // partial rounds are recomputed
  }
  fs::create_directories(images / "original");

  CampaignState state = start_campaign(*model, data, cfg);
  if (resume_round > 0) {
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (!(load_raw_tensor(images / "original" / sample_file_name(i)) == data.images[i])) {
        throw std::runtime_error("resume: original " + std::to_string(i) + " differs from the dataset");
      }
    }
    restore_state(images, resume_round, state);
    log << "resuming after round " << resume_round << "\n";
  } else {
    parallel_for(data.size(), cfg.jobs,
                 [&](std::size_t i) { write_image_pair(images / "original", i, data.images[i], manifest.write_png); });
  }

  std::size_t clean_correct = 0;
  {
    std::vector<int> preds(data.size());
    parallel_for(data.size(), cfg.jobs, [&](std::size_t i) { preds[i] = model->predict_label(data.images[i]); });
    for (std::size_t i = 0; i < data.size(); ++i) clean_correct += preds[i] == data.labels[i] ? 1 : 0;
  }

  const CampaignResult result = adaptive_attack(*model, state, cfg, [&](std::size_t round, const CampaignState& s) {
    write_round(images, round, s, manifest.write_png, cfg.jobs);
    std::size_t wins = 0;
    for (auto f : s.success) wins += f;
    log << "round " << round << "/" << cfg.num_rounds << ": success rate "
        << static_cast<double>(wins) / static_cast<double>(s.success.size()) << "\n";
  });

  // Independent pass over the files just written.
  AuditOptions audit_opts = manifest.audit;
  audit_opts.epsilon = static_cast<double>(cfg.inner.epsilon);
  const DirectoryAudit audit = audit_directory(images, audit_opts);
  if (!audit.orphans.empty()) throw std::runtime_error("attack: audit found unpaired files, first: " + audit.orphans.front());

  AttackSummary summary;
  summary.samples = data.size();
  summary.clean_accuracy = static_cast<double>(clean_correct) / static_cast<double>(data.size());
  std::size_t final_wins = 0;
  for (auto f : state.success) final_wins += f;
  summary.adversarial_accuracy = 1.0 - static_cast<double>(final_wins) / static_cast<double>(data.size());
  summary.violations = audit.violations.size();
  for (const auto& r : audit.reports) summary.max_linf = std::max(summary.max_linf, r.max_linf);
  if (!manifest.audit.quantize_8bit) {
    for (const auto& [key, e] : result.ledger.entries()) {
      auto it = audit.ledger.entries().find(key);
      if (it == audit.ledger.entries().end() || it->second.linf != e.linf || it->second.l2 != e.l2 ||
          it->second.success != e.success) {
        summary.ledger_matches_audit = false;
      }
    }
  }

  write_text(out / "ledger.csv", audit.ledger.to_csv());

  json report;
  report["schema_version"] = kReportSchemaVersion;
  report["mode"] = mode_name(cfg.mode);
  report["epsilon"] = static_cast<double>(cfg.inner.epsilon);
  report["num_rounds"] = cfg.num_rounds;
  report["seed"] = cfg.inner.seed;
  report["samples"] = data.size();
  report["clean_accuracy"] = summary.clean_accuracy;
  report["adversarial_accuracy"] = summary.adversarial_accuracy;
  report["max_linf"] = summary.max_linf;
  report["rounds"] = reports_json(audit.reports);
  report["audit"] = {{"source", "files"},
                     {"tolerance", audit.tolerance},
                     {"quantize_8bit", audit_opts.quantize_8bit},
                     {"violation_count", audit.violations.size()},
                     {"violations", violations_json(audit.violations)},
                     {"campaign_ledger_matches", summary.ledger_matches_audit}};
  if (audit.growth) report["audit"]["growth"] = {{"slope", audit.growth->slope}, {"residual", audit.growth->residual}};
  write_text(out / "report.json", report.dump(2) + "\n");

  summary.ledger_digest = sha256_file(out / "ledger.csv");
  summary.report_digest = sha256_file(out / "report.json");
  summary.images_digest = sha256_tree(images);

  json echo;
  echo["schema_version"] = kReportSchemaVersion;
  echo["config"] = json::parse(manifest.to_json());
  echo["jobs"] = cfg.jobs;
  echo["checkpoint_sha256"] = sha256_file(manifest.checkpoint);
  echo["dataset_sha256"] = sha256_file(manifest.dataset);
  echo["artifacts"] = {{"ledger.csv", summary.ledger_digest},
                       {"report.json", summary.report_digest},
                       {"images", summary.images_digest}};
  write_text(out / "manifest.json", echo.dump(2) + "\n");

  log << "campaign done: clean acc " << summary.clean_accuracy << ", adversarial acc " << summary.adversarial_accuracy
      << ", max linf " << summary.max_linf * 255.0 << "/255, violations " << summary.violations << "\n";
  return summary;
}

// ---------------------------------------------------------------------------
// audit

std::string audit_report_json(const DirectoryAudit& audit, const AuditOptions& opts) {
  json j;
  j["schema_version"] = kReportSchemaVersion;
  j["epsilon"] = opts.epsilon;
  j["tolerance"] = audit.tolerance;
  j["quantize_8bit"] = opts.quantize_8bit;
  j["rounds"] = reports_json(audit.reports);
  j["violation_count"] = audit.violations.size();
  j["violations"] = violations_json(audit.violations);
  if (audit.growth) j["growth"] = {{"slope", audit.growth->slope}, {"residual", audit.growth->residual}};
  j["orphans"] = audit.orphans;
  return j.dump(2);
}

AuditSummary run_audit(const fs::path& images_dir, const AuditOptions& opts, const std::optional<fs::path>& report,
                       std::ostream& log) {
  AuditSummary s;
  s.audit = audit_directory(images_dir, opts);
  if (report) write_text(*report, audit_report_json(s.audit, opts) + "\n");
  const auto& a = s.audit;
  log << "audited " << a.ledger.size() << " image pairs at epsilon " << opts.epsilon * 255.0 << "/255\n";
  for (const auto& r : a.reports) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "  round %3zu: max linf %8.3f/255, mean %8.3f/255, violations %zu\n", r.round,
                  r.max_linf * 255.0, r.mean_linf * 255.0, r.violations);
    log << buf;
  }
  if (a.growth) log << "growth slope " << a.growth->slope * 255.0 << "/255 per round, residual " << a.growth->residual << "\n";
  for (const auto& v : a.violations) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "VIOLATION sample %zu round %zu: linf %.4f/255 (%.2fx epsilon)\n", v.sample, v.round,
                  v.linf * 255.0, v.factor);
    log << buf;
  }
  for (const auto& o : a.orphans) log << "ORPHAN " << o << "\n";
  s.exit_code = !a.orphans.empty() ? 2 : (!a.violations.empty() ? 1 : 0);
  return s;
}

// ---------------------------------------------------------------------------
// dump

std::vector<fs::path> run_dump(const DumpRequest& req) {
  if (!(req.amplification > 0.0)) throw std::invalid_argument("dump: amplification must be positive");
  const fs::path images = req.campaign_dir / "images";
  std::size_t round = req.round.value_or(0);
  if (!req.round) {
    while (fs::exists(images / round_dir_name(round + 1))) ++round;
    if (round == 0) throw std::runtime_error("dump: no rounds found under " + images.string());
  }
  const fs::path adv_dir = images / round_dir_name(round);
  if (!fs::is_directory(adv_dir)) throw std::runtime_error("dump: no such round directory " + adv_dir.string());
  const fs::path out = req.out_dir.empty() ? req.campaign_dir / "figures" : req.out_dir;
  fs::create_directories(out);
  std::vector<fs::path> written;
  for (std::size_t id : req.samples) {
    const fs::path orig_file = images / "original" / sample_file_name(id);
    const fs::path adv_file = adv_dir / sample_file_name(id);
    if (!fs::exists(orig_file) || !fs::exists(adv_file)) throw std::runtime_error("dump: unknown sample id " + std::to_string(id));
    const Tensor original = load_raw_tensor(orig_file);
    const Tensor adversarial = load_raw_tensor(adv_file);
    const std::string stem = sample_file_name(id, "");
    const fs::path files[3] = {out / (stem + "_original.png"), out / (stem + "_adversarial.png"),
                               out / (stem + "_difference.png")};
    write_png(files[0], original);
    write_png(files[1], adversarial);
    write_png(files[2], difference_image(original, adversarial, req.amplification));
    written.insert(written.end(), std::begin(files), std::end(files));
  }
  return written;
}

// ---------------------------------------------------------------------------
// fixture

fs::path make_fixture(const FixtureRequest& req) {
  if (req.samples == 0 || req.side == 0 || req.channels == 0 || req.rounds == 0) {
    throw std::invalid_argument("fixture: sizes must be positive");
  }
  fs::create_directories(req.out_dir);
  const Shape shape{req.channels, req.side, req.side};
  const std::size_t d = shape_size(shape);

  // Nonzero weights so every pixel has a defined attack direction.
  Rng rng(req.seed);
  std::uniform_real_distribution<float> mag(0.5f, 1.0f);
  std::bernoulli_distribution coin(0.5);
  Tensor weight({2, d});
  for (std::size_t i = 0; i < d; ++i) weight[i] = coin(rng) ? mag(rng) : -mag(rng);

  Dataset data;
  data.num_classes = 2;
  const Tensor gray(shape, 128.0f / 255.0f);
  for (std::size_t i = 0; i < req.samples; ++i) {
    data.images.push_back(gray);
    data.labels.push_back(0);
  }
  // Class 0 margin w.x + b starts at +1 on the gray images.
  double wx = 0.0;
  for (std::size_t i = 0; i < d; ++i) wx += static_cast<double>(weight[i]) * gray[i];
  Tensor bias({2});
  bias[0] = static_cast<float>(1.0 - wx);

  ModelConfig cfg;
  cfg.kind = "linear";
  cfg.channels = req.channels;
  cfg.side = req.side;
  cfg.num_classes = 2;
  save_model(req.out_dir / "linear.ckpt", cfg, ParameterSet{{"linear.weight", weight}, {"linear.bias", bias}});
  save_cifar(req.out_dir / "gray.bin", data, CifarVariant::Cifar10);

  CampaignManifest m;
  m.checkpoint = "linear.ckpt";
  m.dataset = "gray.bin";
  m.output_dir = "campaign";
  m.adaptive.mode = req.mode;
  m.adaptive.num_rounds = req.rounds;
  m.adaptive.force_reattack = true;
  m.adaptive.inner.num_eot = 1;
  m.adaptive.inner.eot_max_shift = 0;
  m.adaptive.inner.clamp_lo = -1.0f;
  m.adaptive.inner.clamp_hi = 2.0f;
  m.adaptive.inner.seed = req.seed;
  const fs::path manifest = req.out_dir / "manifest.json";
  write_text(manifest, m.to_json() + "\n");
  return manifest;
}

}  // namespace advbench
