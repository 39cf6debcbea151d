#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "doctest.h"
#include "dsamgn/errors.hpp"
#include "dsamgn/train.hpp"
#include "support.hpp"

using namespace dsamgn;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dsamgn_harness_" + name);
  fs::remove_all(p);
  return p;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

SyntheticSpec tiny_spec() {
  SyntheticSpec s;
  s.n_identities = 8;
  s.samples_per_identity = 4;
  s.grid_h = 2;
  s.grid_w = 2;
  s.channels = 4;
  s.signal_patch_count = 2;
  s.noise_patch_count = 1;
  s.noise_scale = 1.0;
  s.data_seed = 11;
  return s;
}

ModelConfig model_for(const SyntheticSpec& s) {
  ModelConfig m;
  m.grid_h = s.grid_h;
  m.grid_w = s.grid_w;
  m.channels = s.channels;
  m.n_identities = s.n_identities;
  m.beta = 75;
  return m;
}

TrainConfig short_train(std::size_t epochs) {
  TrainConfig t;
  t.epochs = epochs;
  t.warmup_iters = 4;
  t.base_lr = 1e-3;
  t.schedule = ScheduleKind::Cosine;
  return t;
}

bool same_values(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

}  // namespace

TEST_CASE("schedule examples") {
  LrSchedule s;
  s.base_lr = 0.01;
  s.lr_start = 1e-4;
  s.lr_min = 0.0;
  s.warmup_iters = 10;
  s.total_iters = 110;
  CHECK(warmup_schedule(0, s) == 1e-4);
  CHECK(warmup_schedule(5, s) == doctest::Approx(1e-4 + 0.5 * (0.01 - 1e-4)).epsilon(1e-14));
  CHECK(warmup_schedule(10, s) == doctest::Approx(0.01).epsilon(1e-14));
  CHECK(warmup_schedule(60, s) == doctest::Approx(0.005).epsilon(1e-12));
  CHECK(warmup_schedule(110, s) == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(warmup_schedule(500, s) == warmup_schedule(110, s));

  s.lr_min = 0.002;
  CHECK(warmup_schedule(60, s) == doctest::Approx(0.006).epsilon(1e-12));

  s.kind = ScheduleKind::Step;
  s.milestones = {30, 70, 90};
  CHECK(warmup_schedule(29, s) == 0.01);
  CHECK(warmup_schedule(30, s) == doctest::Approx(1e-3).epsilon(1e-14));
  CHECK(warmup_schedule(75, s) == doctest::Approx(1e-4).epsilon(1e-14));
  CHECK(warmup_schedule(95, s) == doctest::Approx(1e-5).epsilon(1e-14));
}

TEST_CASE("property: warm-up is monotone and cosine is non-increasing") {
  LrSchedule s;
  s.base_lr = 3.5e-4;
  s.lr_start = 3.5e-6;
  s.warmup_iters = 40;
  s.total_iters = 400;
  double prev = 0.0;
  for (std::size_t i = 0; i <= 40; ++i) {
    const double lr = warmup_schedule(i, s);
    CHECK(lr > prev);
    prev = lr;
  }
  for (std::size_t i = 41; i <= 400; ++i) {
    const double lr = warmup_schedule(i, s);
    CHECK(lr <= prev);
    CHECK(lr >= s.lr_min);
    prev = lr;
  }
}

TEST_CASE("train config maps epoch milestones to iterations") {
  TrainConfig t;
  t.epochs = 100;
  const LrSchedule s = t.lr_schedule(5);
  CHECK(s.total_iters == 500);
  CHECK(s.milestones == std::vector<std::size_t>{150, 350, 450});
  CHECK(s.lr_start == doctest::Approx(t.base_lr / 100.0));
}

TEST_CASE("dataset generation is deterministic down to the file bytes") {
  const SyntheticSpec s = tiny_spec();
  const fs::path a = scratch("a.bin"), b = scratch("b.bin");
  generate_dataset(s).save(a);
  generate_dataset(s).save(b);
  CHECK(file_bytes(a) == file_bytes(b));
  CHECK(!file_bytes(a).empty());

  SyntheticSpec other = s;
  other.data_seed = 12;
  const fs::path c = scratch("c.bin");
  generate_dataset(other).save(c);
  CHECK(file_bytes(a) != file_bytes(c));

  const Dataset back = Dataset::load(a);
  const Dataset fresh = generate_dataset(s);
  CHECK(same_values(back.train.x, fresh.train.x));
  CHECK(same_values(back.gallery.noise_mask, fresh.gallery.noise_mask));
  CHECK(back.query.ids == fresh.query.ids);
  CHECK(back.signal_patches == fresh.signal_patches);
  CHECK(back.spec.to_pairs() == s.to_pairs());
  for (const auto& p : {a, b, c}) fs::remove(p);
}

TEST_CASE("dataset spec validation") {
  SyntheticSpec s = tiny_spec();
  s.signal_patch_count = 3;
  s.noise_patch_count = 2;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = tiny_spec();
  s.samples_per_identity = 1;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = tiny_spec();
  s.noise_scale = -1;
  CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("noise-free data repeats one sample per identity") {
  SyntheticSpec s = tiny_spec();
  s.noise_patch_count = 0;
  s.intra_class_jitter = 0;
  const Dataset d = generate_dataset(s);
  const std::size_t per = d.train.x.numel() / d.train.size();
  std::map<int, std::vector<double>> first;
  for (std::size_t i = 0; i < d.train.size(); ++i) {
    std::vector<double> row(d.train.x.data().begin() + i * per, d.train.x.data().begin() + (i + 1) * per);
    auto [it, inserted] = first.emplace(d.train.ids[i], row);
    if (!inserted) CHECK(it->second == row);
  }
  CHECK(first.size() == s.n_identities);
  CHECK(first.at(0) != first.at(1));
}

TEST_CASE("split sizes and noise masks") {
  const SyntheticSpec s = tiny_spec();
  const Dataset d = generate_dataset(s);
  CHECK(d.train.size() == 32);
  CHECK(d.query.size() == 8);
  CHECK(d.gallery.size() == 24);
  CHECK(d.train.x.shape() == Shape{32, 4, 2, 2});
  for (int id = 0; id < 8; ++id) CHECK(d.query.ids[static_cast<std::size_t>(id)] == id);
  for (const SampleSet* set : {&d.train, &d.query, &d.gallery}) {
    REQUIRE(set->noise_mask.shape() == Shape{set->size(), 4});
    for (std::size_t i = 0; i < set->size(); ++i) {
      double count = 0.0;
      for (std::size_t j = 0; j < 4; ++j) count += set->noise_mask.at(i, j);
      CHECK(count == 1.0);
    }
  }
  CHECK(d.signal_patches.size() == 2);

  SyntheticSpec images = s;
  images.sample_format = SampleFormat::Images;
  images.image_channels = 3;
  CHECK(generate_dataset(images).train.x.shape() == Shape{32, 3, 16, 16});
}

TEST_CASE("PK sampler composition") {
  const Dataset d = generate_dataset(tiny_spec());
  PkSampler sampler(d.train.ids, 4, 4, 5);
  CHECK(sampler.batches_per_epoch() == 2);
  for (int e = 0; e < 3; ++e) {
    const auto batches = sampler.epoch();
    REQUIRE(batches.size() == 2);
    std::map<int, int> seen;
    for (const auto& batch : batches) {
      REQUIRE(batch.size() == 16);
      std::map<int, int> counts;
      for (auto i : batch) ++counts[d.train.ids[i]];
      CHECK(counts.size() == 4);
      for (const auto& [id, n] : counts) {
        CHECK(n == 4);
        ++seen[id];
      }
      CHECK(std::set<std::size_t>(batch.begin(), batch.end()).size() == 16);
    }
    CHECK(seen.size() == 8);
  }
  const std::vector<int> few{0, 0, 1, 1};
  CHECK_THROWS_AS(PkSampler(few, 4, 2, 1), ConfigError);
}

TEST_CASE("zero loss weights leave the parameters unchanged") {
  const Dataset d = generate_dataset(tiny_spec());
  Model m(model_for(d.spec));
  const Model before = m.clone();
  LossConfig lc;
  lc.loss_weight_res = 0;
  lc.loss_weight_triplet = 0;
  lc.loss_weight_id = 0;
  train(m, short_train(2), lc, d);
  const auto a = m.parameters();
  const auto b = before.parameters();
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(same_values(a[i].second, b[i].second));
}

TEST_CASE("training loss decreases on separable data") {
  SyntheticSpec s = tiny_spec();
  s.noise_patch_count = 0;
  s.foreground_offset = 3.0;
  const Dataset d = generate_dataset(s);
  Model m(model_for(s));
  const auto log = train(m, short_train(25), LossConfig{}, d);
  REQUIRE(log.size() == 50);
  auto mean = [&](std::size_t from) {
    double acc = 0.0;
    for (std::size_t i = from; i < from + 10; ++i) acc += log[i].total;
    return acc / 10.0;
  };
  CHECK(mean(40) < mean(0));
  CHECK(log.front().iter == 0);
  CHECK(log.back().epoch == 24);
  CHECK(log.front().to_line().rfind("iter=0 epoch=0 lr=", 0) == 0);
}

TEST_CASE("two training runs produce identical checkpoints") {
  const Dataset d = generate_dataset(tiny_spec());
  const fs::path a = scratch("ck_a.bin"), b = scratch("ck_b.bin");
  for (const auto& path : {a, b}) {
    Model m(model_for(d.spec));
    train(m, short_train(3), LossConfig{}, d);
    m.save(path);
  }
  CHECK(file_bytes(a) == file_bytes(b));
  fs::remove(a);
  fs::remove(b);
}

TEST_CASE("non-finite loss raises NumericError and dumps the batch") {
  Dataset d = generate_dataset(tiny_spec());
  for (double& v : d.train.x.data()) v = std::numeric_limits<double>::quiet_NaN();
  Model m(model_for(d.spec));
  const fs::path dump = scratch("nan_batch.bin");
  TrainOptions opts;
  opts.diagnostic_path = dump;
  CHECK_THROWS_AS(train(m, short_train(1), LossConfig{}, d, opts), NumericError);
  REQUIRE(fs::exists(dump));
  const Container c = load_container(dump);
  CHECK(c.meta_value("iter") == "0");
  CHECK(c.tensor("batch.x").dim(0) == 16);
  fs::remove(dump);
}

TEST_CASE("evaluate rejects mismatched samples and is deterministic") {
  const Dataset d = generate_dataset(tiny_spec());
  Model m(model_for(d.spec));
  const std::string first = metrics_json(evaluate(m, d));
  CHECK(first == metrics_json(evaluate(m, d)));

  ModelConfig wide = model_for(d.spec);
  wide.channels = 6;
  Model other(wide);
  CHECK_THROWS_AS(evaluate(other, d), DimensionError);
}

TEST_CASE("untrained model on signal-free data stays near the exact random-ranking AP") {
  SyntheticSpec s = tiny_spec();
  s.signal_patch_count = 0;
  s.noise_patch_count = 2;
  s.noise_scale = 3.0;
  s.n_identities = 5;
  s.samples_per_identity = 41;
  const Dataset d = generate_dataset(s);
  Model m(model_for(s));
  const RetrievalResult r = evaluate(m, d);

  // Expected AP of a uniformly random ranking with R relevant items among G.
  const double g = 200, rel = 40;
  double harmonic = 0.0;
  for (int i = 1; i <= 200; ++i) harmonic += 1.0 / i;
  const double expected = (harmonic + (rel - 1) / (g - 1) * (g - harmonic)) / g;

  const double mean = r.mean_ap;
  double var = 0.0;
  for (double ap : r.per_query_ap) var += (ap - mean) * (ap - mean);
  const double se = std::sqrt(var / (r.per_query_ap.size() - 1) / r.per_query_ap.size());
  CHECK(r.per_query_ap.size() == 5);
  CHECK(std::abs(mean - expected) <= 4 * se);
}

TEST_CASE("inspect reports the retained count and column mass") {
  const Dataset d = generate_dataset(tiny_spec());
  const std::vector<std::size_t> one{0};
  for (double beta : {0.0, 75.0, 95.0}) {
    CAPTURE(beta);
    ModelConfig c = model_for(d.spec);
    c.beta = beta;
    Model m(c);
    const auto records = inspect(m, d.query.gather(one));
    REQUIRE(records.size() == 4);
    for (const auto& r : records) {
      const std::size_t n = r.similarity.numel();
      const auto dropped = static_cast<std::size_t>(std::ceil(beta * static_cast<double>(n) / 100.0));
      CHECK(r.nonzeros <= n - dropped);
      CHECK(r.column_mass.size() == 4);
      double total = 0.0;
      for (double v : r.column_mass) total += v;
      double asum = 0.0;
      for (double v : r.adjacency.data()) asum += v;
      CHECK(std::abs(total - asum) < 1e-12);
      if (beta == 0.0) {
        CHECK(same_values(r.adjacency, r.similarity));
        CHECK(r.nonzeros == n);
      } else {
        CHECK(r.nonzeros == n - dropped);
      }
    }
  }
  Model m(model_for(d.spec));
  CHECK_THROWS_AS(inspect(m, d.query.gather(std::vector<std::size_t>{0, 1})), DimensionError);
}

TEST_CASE("inspect CSV files") {
  const Dataset d = generate_dataset(tiny_spec());
  Model m(model_for(d.spec));
  const fs::path dir = scratch("inspect");
  write_inspect_csv(dir, inspect(m, d.query.gather(std::vector<std::size_t>{0})));
  for (const char* f : {"summary.csv", "block0_brancha_S.csv", "block1_branchb_A.csv",
                        "block0_branchb_mass.csv", "block1_brancha_output.csv"}) {
    CHECK_MESSAGE(fs::exists(dir / f), f);
  }
  std::ifstream summary(dir / "summary.csv");
  std::string header;
  std::getline(summary, header);
  CHECK(header == "block,branch,threshold,nonzeros,entries");
  std::size_t rows = 0;
  for (std::string line; std::getline(summary, line);) ++rows;
  CHECK(rows == 4);
  fs::remove_all(dir);
}

TEST_CASE("tensor and container serialization round trips") {
  Rng rng(1);
  const Tensor t = test::random_tensor({2, 3, 4}, rng);
  std::stringstream ss;
  write_tensor(ss, t);
  CHECK(same_values(read_tensor(ss), t));

  Container c;
  c.set_meta("format", "x");
  c.add("a", t);
  c.add("b", Tensor::vector({1.5, -2.0}));
  std::stringstream cs;
  write_container(cs, c);
  const Container back = read_container(cs);
  CHECK(back.meta_value("format") == "x");
  CHECK_FALSE(back.meta_value("missing").has_value());
  CHECK(back.manifest() == c.manifest());
  CHECK(same_values(back.tensor("b"), c.tensor("b")));
  CHECK_THROWS_AS(back.tensor("zzz"), IoError);

  std::stringstream garbage("not a tensor file");
  CHECK_THROWS_AS(read_container(garbage), IoError);
  CHECK_THROWS_AS(load_container(scratch("absent.bin")), IoError);
}

TEST_CASE("CSV layout") {
  CHECK(to_csv(Tensor::vector({1, 0.5})) == "1,0.5\n");
  CHECK(to_csv(Tensor::matrix({{1, 2}, {3, 4}})) == "1,2\n3,4\n");
  CHECK(to_csv(Tensor::vector({0.1})) == "0.10000000000000001\n");
}

TEST_CASE("key-value config") {
  KeyValueConfig kv = KeyValueConfig::parse("# comment\nepochs = 12\nbase_lr=0.01  # inline\nschedule = cosine\n");
  const TrainConfig t = TrainConfig::read(kv);
  CHECK(t.epochs == 12);
  CHECK(t.base_lr == 0.01);
  CHECK(t.schedule == ScheduleKind::Cosine);
  CHECK_NOTHROW(kv.reject_unknown());

  KeyValueConfig unknown = KeyValueConfig::parse("epochs = 3\nepoch = 4\n");
  TrainConfig::read(unknown);
  try {
    unknown.reject_unknown();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("epoch") != std::string::npos);
  }

  CHECK_THROWS_AS(KeyValueConfig::parse("a = 1\na = 2\n"), ConfigError);
  CHECK_THROWS_AS(KeyValueConfig::parse("no equals sign\n"), ConfigError);
  KeyValueConfig bad = KeyValueConfig::parse("epochs = many\n");
  CHECK_THROWS_AS(TrainConfig::read(bad), ConfigError);
  KeyValueConfig opt = KeyValueConfig::parse("optimizer = rmsprop\n");
  CHECK_THROWS_AS(TrainConfig::read(opt), ConfigError);
  CHECK_THROWS_AS(KeyValueConfig::load(scratch("absent.cfg")), IoError);

  KeyValueConfig data = KeyValueConfig::parse("n_identities = 6\nsample_format = images\n");
  const SyntheticSpec s = SyntheticSpec::read(data);
  CHECK(s.n_identities == 6);
  CHECK(s.sample_format == SampleFormat::Images);
}

TEST_CASE("ablation with a single beta gives one row") {
  const Dataset d = generate_dataset(tiny_spec());
  const std::vector<double> betas{0};
  const auto rows = ablate_beta(model_for(d.spec), short_train(2), LossConfig{}, d, betas);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].beta == 0.0);
  const auto j = nlohmann::json::parse(ablation_json(rows));
  CHECK(j.size() == 1);
  CHECK(j[0]["beta"] == 0.0);
  CHECK(j[0]["mAP"] == rows[0].metrics.mean_ap);
  const std::string table = ablation_table(rows);
  CHECK(std::count(table.begin(), table.end(), '\n') == 2);
}
