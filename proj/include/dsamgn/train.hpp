#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dsamgn/config.hpp"
#include "dsamgn/dataset.hpp"
#include "dsamgn/losses.hpp"
#include "dsamgn/metrics.hpp"
#include "dsamgn/model.hpp"
#include "dsamgn/schedule.hpp"

namespace dsamgn {

enum class OptimizerKind { SgdMomentum, Adam };

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::Adam;
  double base_lr = 3.5e-4;
  std::optional<double> lr_start;  // default base_lr / 100
  double lr_min = 0.0;
  std::size_t warmup_iters = 50;
  ScheduleKind schedule = ScheduleKind::Step;
  std::vector<double> step_milestones = {30, 70, 90};  // epochs
  double step_gamma = 0.1;
  std::size_t epochs = 100;
  std::size_t pk_p = 4;
  std::size_t pk_k = 4;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::uint64_t train_seed = 3;
  std::size_t eval_every = 0;  // epochs; 0 disables periodic evaluation

  void validate() const;
  static TrainConfig read(KeyValueConfig& kv);
  /// Schedule over `iters_per_epoch`-long epochs.
  LrSchedule lr_schedule(std::size_t iters_per_epoch) const;
};

/// P identities × K samples per batch. Identity order is reshuffled every
/// epoch; identities with fewer than K samples are drawn with repetition.
class PkSampler {
 public:
  PkSampler(std::span<const int> labels, std::size_t p, std::size_t k, std::uint64_t seed);
  std::vector<std::vector<std::size_t>> epoch();
  std::size_t batches_per_epoch() const { return identities_.size() / p_; }

 private:
  std::vector<int> identities_;
  std::vector<std::vector<std::size_t>> members_;
  std::size_t p_, k_;
  Rng rng_;
};

struct TrainLogEntry {
  std::size_t iter = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  double total = 0.0;
  double res = 0.0;
  double triplet = 0.0;
  double id = 0.0;

  /// `iter=<n> epoch=<e> lr=<x> total=<x> res=<x> triplet=<x> id=<x>`
  std::string to_line() const;
};

struct TrainOptions {
  std::ostream* log = nullptr;
  /// Where the offending batch is written when the loss turns non-finite.
  std::optional<std::filesystem::path> diagnostic_path;
};

/// Trains in place. Throws NumericError on a non-finite loss.
std::vector<TrainLogEntry> train(Model& model, const TrainConfig& tc, const LossConfig& lc,
                                 const Dataset& data, const TrainOptions& opts = {});

/// Eval-mode retrieval embeddings, computed in chunks.
Tensor embed_all(Model& model, const SampleSet& set);

/// Query/gallery retrieval metrics of `model` on the dataset's test split.
RetrievalResult evaluate(Model& model, const Dataset& data);

struct AblationRow {
  double beta = 0.0;
  RetrievalResult metrics;
};

/// One model per beta, identical initialization and batch order.
std::vector<AblationRow> ablate_beta(const ModelConfig& mc, const TrainConfig& tc,
                                     const LossConfig& lc, const Dataset& data,
                                     std::span<const double> betas, std::ostream* log = nullptr);

std::string ablation_json(const std::vector<AblationRow>& rows);
std::string ablation_table(const std::vector<AblationRow>& rows);

/// Per block and branch: similarity, threshold, adjacency, retention count,
/// attention mass received per patch (column sums of A), branch output.
struct InspectRecord {
  std::size_t block = 0;
  char branch = 'a';
  Tensor similarity;
  Tensor adjacency;
  double threshold = 0.0;
  std::size_t nonzeros = 0;
  std::vector<double> column_mass;
  Tensor output;
};

/// `sample` holds a single sample (leading extent 1).
std::vector<InspectRecord> inspect(Model& model, const Tensor& sample);

/// Writes block<b>_branch<x>_{S,A,mass,output}.csv plus summary.csv into `dir`.
void write_inspect_csv(const std::filesystem::path& dir, const std::vector<InspectRecord>& records);

}  // namespace dsamgn
