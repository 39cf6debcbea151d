#include "dsamgn/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dsamgn/errors.hpp"
#include "dsamgn/ops.hpp"
#include "dsamgn/optim.hpp"

namespace dsamgn {

namespace {

constexpr std::size_t kEmbedChunk = 64;

std::string g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::unique_ptr<Optimizer> make_optimizer(const TrainConfig& tc) {
  if (tc.optimizer == OptimizerKind::Adam) {
    return std::make_unique<Adam>(0.9, 0.999, 1e-8, tc.weight_decay);
  }
  return std::make_unique<SgdMomentum>(tc.momentum, tc.weight_decay);
}

}  // namespace

void TrainConfig::validate() const {
  if (!(base_lr > 0)) throw ConfigError("base_lr must be positive");
  if (lr_start && !(*lr_start > 0)) throw ConfigError("lr_start must be positive");
  if (lr_min < 0) throw ConfigError("lr_min must be non-negative");
  if (pk_p < 2) throw ConfigError("pk_p must be at least 2 identities per batch");
  if (pk_k < 2) throw ConfigError("pk_k must be at least 2 samples per identity");
  if (step_gamma <= 0) throw ConfigError("step_gamma must be positive");
  for (double m : step_milestones)
    if (m < 0) throw ConfigError("step_milestones must be non-negative");
}

TrainConfig TrainConfig::read(KeyValueConfig& kv) {
  TrainConfig t;
  const std::string opt = kv.get_string("optimizer", "adam");
  if (opt == "adam") {
    t.optimizer = OptimizerKind::Adam;
  } else if (opt == "sgd_momentum") {
    t.optimizer = OptimizerKind::SgdMomentum;
  } else {
    throw ConfigError("optimizer must be adam or sgd_momentum, got '" + opt + "'");
  }
  t.base_lr = kv.get_double("base_lr", t.base_lr);
  if (kv.has("lr_start")) t.lr_start = kv.get_double("lr_start", 0.0);
  t.lr_min = kv.get_double("lr_min", t.lr_min);
  t.warmup_iters = kv.get_size("warmup_iters", t.warmup_iters);
  const std::string sched = kv.get_string("schedule", "step");
  if (sched == "cosine") {
    t.schedule = ScheduleKind::Cosine;
  } else if (sched == "step") {
    t.schedule = ScheduleKind::Step;
  } else {
    throw ConfigError("schedule must be cosine or step, got '" + sched + "'");
  }
  t.step_milestones = kv.get_doubles("step_milestones", t.step_milestones);
  t.step_gamma = kv.get_double("step_gamma", t.step_gamma);
  t.epochs = kv.get_size("epochs", t.epochs);
  t.pk_p = kv.get_size("pk_p", t.pk_p);
  t.pk_k = kv.get_size("pk_k", t.pk_k);
  t.momentum = kv.get_double("momentum", t.momentum);
  t.weight_decay = kv.get_double("weight_decay", t.weight_decay);
  t.train_seed = kv.get_u64("train_seed", t.train_seed);
  t.eval_every = kv.get_size("eval_every", t.eval_every);
  t.validate();
  return t;
}

LrSchedule TrainConfig::lr_schedule(std::size_t iters_per_epoch) const {
  LrSchedule s;
  s.base_lr = base_lr;
  s.lr_start = lr_start.value_or(base_lr / 100.0);
  s.lr_min = lr_min;
  s.warmup_iters = warmup_iters;
  s.total_iters = epochs * iters_per_epoch;
  s.kind = schedule;
  for (double m : step_milestones) {
    s.milestones.push_back(static_cast<std::size_t>(std::llround(m * static_cast<double>(iters_per_epoch))));
  }
  s.gamma = step_gamma;
  return s;
}

PkSampler::PkSampler(std::span<const int> labels, std::size_t p, std::size_t k,
                     std::uint64_t seed)
    : p_(p), k_(k), rng_(seed) {
  std::map<int, std::vector<std::size_t>> by_id;
  for (std::size_t i = 0; i < labels.size(); ++i) by_id[labels[i]].push_back(i);
  for (auto& [id, members] : by_id) {
    identities_.push_back(id);
    members_.push_back(std::move(members));
  }
  if (identities_.size() < p_) {
    throw ConfigError("PK sampler needs at least " + std::to_string(p_) + " identities, data has " +
                      std::to_string(identities_.size()));
  }
}

std::vector<std::vector<std::size_t>> PkSampler::epoch() {
  std::vector<std::size_t> order(identities_.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng_.shuffle(order);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start + p_ <= order.size(); start += p_) {
    std::vector<std::size_t> batch;
    for (std::size_t j = start; j < start + p_; ++j) {
      auto members = members_[order[j]];
      rng_.shuffle(members);
      for (std::size_t s = 0; s < k_; ++s) batch.push_back(members[s % members.size()]);
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

std::string TrainLogEntry::to_line() const {
  return "iter=" + std::to_string(iter) + " epoch=" + std::to_string(epoch) + " lr=" + g(lr) +
         " total=" + g(total) + " res=" + g(res) + " triplet=" + g(triplet) + " id=" + g(id);
}

std::vector<TrainLogEntry> train(Model& model, const TrainConfig& tc, const LossConfig& lc,
                                 const Dataset& data, const TrainOptions& opts) {
  tc.validate();
  lc.validate();
  PkSampler sampler(data.train.ids, tc.pk_p, tc.pk_k, tc.train_seed);
  const LrSchedule schedule = tc.lr_schedule(sampler.batches_per_epoch());
  auto optimizer = make_optimizer(tc);
  const NamedTensors params = model.parameters();

  std::vector<TrainLogEntry> log;
  Tape tape;
  std::size_t iter = 0;
  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    for (const auto& batch : sampler.epoch()) {
      const double lr = warmup_schedule(iter, schedule);
      const Tensor x = data.train.gather(batch);
      std::vector<int> labels;
      for (auto i : batch) labels.push_back(data.train.ids[i]);

      for (const auto& [name, p] : params) p.clear_grad();
      tape.reset();
      LossBreakdown loss;
      {
        TapeScope scope(tape);
        loss = total_loss(model.forward(x, true), labels, lc);
      }
      if (!std::isfinite(loss.total.item())) {
        std::string where;
        if (opts.diagnostic_path) {
          Container dump;
          dump.set_meta("iter", std::to_string(iter));
          dump.add("batch.x", x);
          dump.add("batch.ids", Tensor::vector(std::vector<double>(labels.begin(), labels.end())));
          save_container(*opts.diagnostic_path, dump);
          where = "; batch written to " + opts.diagnostic_path->string();
        }
        throw NumericError("non-finite loss at iteration " + std::to_string(iter) + " (res=" +
                           g(loss.res) + " triplet=" + g(loss.triplet) + " id=" + g(loss.id) +
                           ")" + where);
      }
      tape.backward(loss.total);
      optimizer->step(params, lr);

      TrainLogEntry e{iter, epoch, lr, loss.total.item(), loss.res, loss.triplet, loss.id};
      if (opts.log) *opts.log << e.to_line() << '\n';
      log.push_back(e);
      ++iter;
    }
    if (tc.eval_every && (epoch + 1) % tc.eval_every == 0 && opts.log) {
      const auto r = evaluate(model, data);
      *opts.log << "eval epoch=" << epoch << " mAP=" << g(r.mean_ap) << " rank1=" << g(r.rank(1))
                << " rank5=" << g(r.rank(5)) << '\n';
    }
  }
  tape.reset();
  for (const auto& [name, p] : params) p.clear_grad();
  return log;
}

Tensor embed_all(Model& model, const SampleSet& set) {
  std::vector<Tensor> parts;
  for (std::size_t start = 0; start < set.size(); start += kEmbedChunk) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(set.size(), start + kEmbedChunk); ++i) idx.push_back(i);
    parts.push_back(model.embed(set.gather(idx)));
  }
  return concat(parts, 0);
}

RetrievalResult evaluate(Model& model, const Dataset& data) {
  const Shape expected = model.config().sample_shape();
  const Shape& got = data.query.x.shape();
  if (!std::equal(expected.begin(), expected.end(), got.begin() + 1, got.end())) {
    throw DimensionError("checkpoint expects samples of shape " + shape_string(expected) +
                         ", dataset has " + shape_string(Shape(got.begin() + 1, got.end())));
  }
  const Tensor q = embed_all(model, data.query);
  const Tensor gal = embed_all(model, data.gallery);
  return evaluate_retrieval(q, gal, data.query.ids, data.gallery.ids);
}

std::vector<AblationRow> ablate_beta(const ModelConfig& mc, const TrainConfig& tc,
                                     const LossConfig& lc, const Dataset& data,
                                     std::span<const double> betas, std::ostream* log) {
  std::vector<AblationRow> rows;
  for (double beta : betas) {
    ModelConfig arm = mc;
    arm.beta = beta;
    Model model(arm);
    if (log) *log << "# beta=" << g(beta) << '\n';
    train(model, tc, lc, data, {log, std::nullopt});
    rows.push_back({beta, evaluate(model, data)});
  }
  return rows;
}

std::string ablation_json(const std::vector<AblationRow>& rows) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    j.push_back({{"beta", r.beta},
                 {"mAP", r.metrics.mean_ap},
                 {"rank1", r.metrics.rank(1)},
                 {"rank5", r.metrics.rank(5)}});
  }
  return j.dump(2) + "\n";
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  char line[96];
  std::snprintf(line, sizeof line, "%8s %9s %9s %9s\n", "beta", "mAP", "Rank-1", "Rank-5");
  os << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%8.2f %9.4f %9.4f %9.4f\n", r.beta, r.metrics.mean_ap,
                  r.metrics.rank(1), r.metrics.rank(5));
    os << line;
  }
  return os.str();
}

std::vector<InspectRecord> inspect(Model& model, const Tensor& sample) {
  if (sample.rank() == 0 || sample.dim(0) != 1) {
    throw DimensionError("inspect expects a single sample, got " + shape_string(sample.shape()));
  }
  std::vector<std::vector<BlockTrace>> traces;
  model.forward(sample, false, &traces);
  std::vector<InspectRecord> out;
  const auto& blocks = traces.front();
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    for (std::size_t br = 0; br < 2; ++br) {
      const auto& t = blocks[b].branches[br];
      InspectRecord r;
      r.block = b;
      r.branch = br == 0 ? 'a' : 'b';
      r.similarity = t.sasamg.similarity.s.detach();
      r.adjacency = t.sasamg.adjacency.a.detach();
      r.threshold = t.sasamg.adjacency.threshold;
      r.nonzeros = t.sasamg.adjacency.retained();
      const std::size_t n = r.adjacency.dim(0);
      r.column_mass.assign(n, 0.0);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) r.column_mass[j] += r.adjacency.at(i, j);
      r.output = t.output.detach();
      out.push_back(std::move(r));
    }
  }
  return out;
}

void write_inspect_csv(const std::filesystem::path& dir, const std::vector<InspectRecord>& records) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  std::ofstream summary(dir / "summary.csv");
  if (!summary) throw IoError("cannot write " + (dir / "summary.csv").string());
  summary << "block,branch,threshold,nonzeros,entries\n";
  for (const auto& r : records) {
    const std::string stem = "block" + std::to_string(r.block) + "_branch" + r.branch;
    save_csv(dir / (stem + "_S.csv"), r.similarity);
    save_csv(dir / (stem + "_A.csv"), r.adjacency);
    save_csv(dir / (stem + "_mass.csv"), Tensor::vector(r.column_mass));
    save_csv(dir / (stem + "_output.csv"), r.output);
    summary << r.block << ',' << r.branch << ',' << format_double(r.threshold) << ','
            << r.nonzeros << ',' << r.adjacency.numel() << '\n';
  }
}

}  // namespace dsamgn
