#include "advbench/adaptive.hpp"

#include <stdexcept>

#include "advbench/parallel.hpp"
#include "advbench/rng.hpp"

namespace advbench {

const char* mode_name(ProjectionMode m) { return m == ProjectionMode::Buggy ? "buggy" : "corrected"; }

ProjectionMode parse_mode(const std::string& s) {
  if (s == "buggy" || s == "BUGGY") return ProjectionMode::Buggy;
  if (s == "corrected" || s == "CORRECTED") return ProjectionMode::Corrected;
  throw std::invalid_argument("unknown mode '" + s + "' (expected buggy or corrected)");
}

void AdaptiveConfig::validate() const {
  if (num_rounds < 1) throw std::invalid_argument("adaptive config: num_rounds must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("adaptive config: batch size must be >= 1");
  if (jobs < 1) throw std::invalid_argument("adaptive config: jobs must be >= 1");
  inner.validate();
}

std::vector<std::size_t> select_failed(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) throw std::invalid_argument("select_failed: length mismatch");
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (predictions[i] == labels[i]) out.push_back(i);
  }
  return out;
}

namespace {

bool is_success(const AttackConfig& cfg, std::size_t i, int prediction, int label) {
  return cfg.targeted ? prediction == cfg.targets.at(i) : prediction != label;
}

}  // namespace

CampaignState start_campaign(const Classifier& model, const Dataset& data, const AdaptiveConfig& cfg) {
  cfg.validate();
  data.validate();
  if (cfg.inner.targeted && cfg.inner.targets.size() != data.size()) {
    throw std::invalid_argument("adaptive: targeted campaign needs one target per sample");
  }
  CampaignState state;
  state.originals = data.images;
  state.current_adv = data.images;
  state.labels = data.labels;
  std::vector<int> preds(data.size());
  parallel_for(data.size(), cfg.jobs, [&](std::size_t i) { preds[i] = model.predict_label(data.images[i]); });
  state.success.resize(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) state.success[i] = is_success(cfg.inner, i, preds[i], data.labels[i]);
  return state;
}

CampaignResult adaptive_attack(const Classifier& model, CampaignState& state, const AdaptiveConfig& cfg,
                               const RoundObserver& observer) {
  cfg.validate();
  const std::size_t n = state.originals.size();
  if (state.current_adv.size() != n || state.labels.size() != n || state.success.size() != n) {
    throw std::invalid_argument("adaptive: inconsistent campaign state");
  }
  const AttackConfig& inner = cfg.inner;
  CampaignResult result;
  result.ledger = PerturbationLedger(CampaignMeta{static_cast<double>(inner.epsilon), mode_name(cfg.mode), inner.seed});

  for (std::size_t round = state.rounds_completed + 1; round <= cfg.num_rounds; ++round) {
    // Samples still to fool. Targeted campaigns compare against targets.
    std::vector<std::size_t> failed;
    for (std::size_t i = 0; i < n; ++i) {
      if (cfg.force_reattack || !state.success[i]) failed.push_back(i);
    }

    std::vector<SampleAttack> outcomes(failed.size());
    for (std::size_t begin = 0; begin < failed.size(); begin += cfg.batch_size) {
      const std::size_t count = std::min(cfg.batch_size, failed.size() - begin);
      parallel_for(count, cfg.jobs, [&](std::size_t k) {
        const std::size_t i = failed[begin + k];
        const Tensor& original = state.originals[i];
        Tensor start = state.current_adv[i];
        const Tensor* baseline = &start;
        if (cfg.mode == ProjectionMode::Corrected) {
          start = project_linf(start, original, inner.epsilon, inner.clamp_lo, inner.clamp_hi);
          baseline = &original;
        }
        const std::optional<int> target = inner.targeted ? std::optional<int>(inner.targets[i]) : std::nullopt;
        outcomes[begin + k] = pgd_attack_sample(model, start, state.labels[i], *baseline, inner,
                                                stream_seed(inner.seed, {round, i}), target);
      });
    }
    for (std::size_t k = 0; k < failed.size(); ++k) {
      const std::size_t i = failed[k];
      state.current_adv[i] = std::move(outcomes[k].adversarial);
      state.success[i] = outcomes[k].success ? 1 : 0;
    }
    state.rounds_completed = round;

    for (std::size_t i = 0; i < n; ++i) {
      LedgerEntry e;
      e.sample = i;
      e.round = round;
      e.linf = linf(state.originals[i], state.current_adv[i]);
      e.l2 = l2(state.originals[i], state.current_adv[i]);
      e.success = state.success[i] != 0;
      result.ledger.add(e);
    }
    if (observer) observer(round, state);
  }

  const double eps = static_cast<double>(inner.epsilon);
  result.reports = round_reports(result.ledger, eps, ulp_tolerance(eps, 4));
  result.final_images = state.current_adv;
  result.success = state.success;
  return result;
}

CampaignResult adaptive_attack(const Classifier& model, const Dataset& data, const AdaptiveConfig& cfg,
                               const RoundObserver& observer) {
  CampaignState state = start_campaign(model, data, cfg);
  return adaptive_attack(model, state, cfg, observer);
}

}  // namespace advbench
