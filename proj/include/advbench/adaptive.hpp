#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "advbench/attack.hpp"
#include "advbench/audit.hpp"
#include "advbench/data.hpp"
#include "advbench/models.hpp"

namespace advbench {

/// How each round picks the centre of its epsilon ball.
enum class ProjectionMode {
  Buggy,      // the round's starting image: perturbations compound across rounds
  Corrected,  // always the pristine original
};

const char* mode_name(ProjectionMode m);
ProjectionMode parse_mode(const std::string& s);

struct AdaptiveConfig {
  std::size_t num_rounds = 20;
  std::size_t batch_size = 32;
  ProjectionMode mode = ProjectionMode::Corrected;
  AttackConfig inner;
  // Re-attack every sample every round, successful or not. Makes the
  // accumulation law deterministic on fixtures.
  bool force_reattack = false;
  std::size_t jobs = 1;

  void validate() const;
};

/// Indices whose prediction still equals the label, i.e. samples the attack
/// has not fooled yet.
std::vector<std::size_t> select_failed(std::span<const int> predictions, std::span<const int> labels);

struct CampaignState {
  std::vector<Tensor> originals;    // never modified once the campaign starts
  std::vector<Tensor> current_adv;
  std::vector<int> labels;
  std::vector<std::uint8_t> success;
  std::size_t rounds_completed = 0;
};

struct CampaignResult {
  std::vector<Tensor> final_images;
  PerturbationLedger ledger;
  std::vector<RoundReport> reports;
  std::vector<std::uint8_t> success;
};

/// Called after every round with the updated state; the CLI persists
/// artifacts here. Exceptions abort the campaign.
using RoundObserver = std::function<void(std::size_t round, const CampaignState& state)>;

/// Starts a fresh campaign over `data`.
CampaignState start_campaign(const Classifier& model, const Dataset& data, const AdaptiveConfig& cfg);

/// Multi-round adaptive attack: each round re-attacks the samples that are
/// still classified correctly, warm-starting PGD from their current
/// adversarial image. Runs rounds state.rounds_completed+1 .. num_rounds, so
/// a state restored from disk resumes where it stopped. The ledger covers the
/// rounds run by this call.
CampaignResult adaptive_attack(const Classifier& model, CampaignState& state, const AdaptiveConfig& cfg,
                               const RoundObserver& observer = {});

/// Convenience: start_campaign + adaptive_attack.
CampaignResult adaptive_attack(const Classifier& model, const Dataset& data, const AdaptiveConfig& cfg,
                               const RoundObserver& observer = {});

}  // namespace advbench
