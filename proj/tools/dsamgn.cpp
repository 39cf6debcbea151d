#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "dsamgn/errors.hpp"
#include "dsamgn/train.hpp"

using namespace dsamgn;

namespace {

enum Exit { kOk = 0, kConfig = 1, kNumeric = 2, kIo = 3 };

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os << text;
  if (!os) throw IoError("write failed: " + path);
}

std::string required(KeyValueConfig& kv, const std::string& key) {
  if (!kv.has(key)) throw ConfigError("missing required config key '" + key + "'");
  return kv.get_string(key, "");
}

// Model shape keys fall back to the dataset's own values.
void default_model_shape(KeyValueConfig& kv, const SyntheticSpec& spec) {
  const std::pair<const char*, std::size_t> keys[] = {{"grid_h", spec.grid_h},
                                                      {"grid_w", spec.grid_w},
                                                      {"channels", spec.channels},
                                                      {"n_identities", spec.n_identities},
                                                      {"image_channels", spec.image_channels}};
  for (const auto& [key, value] : keys)
    if (!kv.has(key)) kv.set(key, std::to_string(value));
  if (!kv.has("backbone")) {
    kv.set("backbone", spec.sample_format == SampleFormat::Images ? "toy_conv" : "passthrough");
  }
}

void emit(const std::string& text, KeyValueConfig& kv, const std::string& key) {
  const std::string path = kv.get_string(key, "");
  if (path.empty()) {
    std::cout << text;
  } else {
    write_text(path, text);
  }
}

int gen_data(KeyValueConfig kv) {
  const std::string out = required(kv, "output");
  const SyntheticSpec spec = SyntheticSpec::read(kv);
  kv.reject_unknown();
  spec.validate();
  const Dataset d = generate_dataset(spec);
  d.save(out);
  std::cerr << "wrote " << d.train.size() << " train, " << d.query.size() << " query, "
            << d.gallery.size() << " gallery samples to " << out << '\n';
  return kOk;
}

int train_cmd(KeyValueConfig kv) {
  const Dataset data = Dataset::load(required(kv, "data"));
  const std::string checkpoint = required(kv, "checkpoint");
  const std::string log_path = kv.get_string("log", "");
  const std::string metrics_path = kv.get_string("metrics", "");
  const std::string diagnostic = kv.get_string("diagnostic", checkpoint + ".nonfinite.bin");
  default_model_shape(kv, data.spec);
  const ModelConfig mc = ModelConfig::read(kv);
  const TrainConfig tc = TrainConfig::read(kv);
  const LossConfig lc = LossConfig::read(kv);
  kv.reject_unknown();

  std::ofstream log_file;
  std::ostream* log = &std::cout;
  if (!log_path.empty()) {
    log_file.open(log_path);
    if (!log_file) throw IoError("cannot open " + log_path + " for writing");
    log = &log_file;
  }
  Model model(mc);
  TrainOptions opts;
  opts.log = log;
  opts.diagnostic_path = diagnostic;
  train(model, tc, lc, data, opts);
  model.save(checkpoint);
  if (!metrics_path.empty()) write_text(metrics_path, metrics_json(evaluate(model, data)));
  return kOk;
}

int eval_cmd(KeyValueConfig kv) {
  Model model = Model::load(required(kv, "checkpoint"));
  const Dataset data = Dataset::load(required(kv, "data"));
  const std::string text = metrics_json(evaluate(model, data));
  emit(text, kv, "metrics");
  kv.reject_unknown();
  return kOk;
}

int ablate_cmd(KeyValueConfig kv) {
  const Dataset data = Dataset::load(required(kv, "data"));
  const std::vector<double> betas = kv.get_doubles("betas", {0, 75, 85, 95, 98});
  const std::string json_path = kv.get_string("output_json", "");
  const std::string table_path = kv.get_string("output_table", "");
  const std::string log_path = kv.get_string("log", "");
  default_model_shape(kv, data.spec);
  const ModelConfig mc = ModelConfig::read(kv);
  const TrainConfig tc = TrainConfig::read(kv);
  const LossConfig lc = LossConfig::read(kv);
  kv.reject_unknown();
  if (betas.empty()) throw ConfigError("betas must list at least one percentile");

  std::ofstream log_file;
  std::ostream* log = nullptr;
  if (!log_path.empty()) {
    log_file.open(log_path);
    if (!log_file) throw IoError("cannot open " + log_path + " for writing");
    log = &log_file;
  }
  const auto rows = ablate_beta(mc, tc, lc, data, betas, log);
  const std::string json = ablation_json(rows);
  const std::string table = ablation_table(rows);
  if (json_path.empty()) {
    std::cout << json;
  } else {
    write_text(json_path, json);
  }
  if (table_path.empty()) {
    std::cerr << table;
  } else {
    write_text(table_path, table);
  }
  return kOk;
}

int inspect_cmd(KeyValueConfig kv) {
  Model model = Model::load(required(kv, "checkpoint"));
  const Dataset data = Dataset::load(required(kv, "data"));
  const std::string dir = required(kv, "output_dir");
  const std::string split = kv.get_string("split", "query");
  const std::size_t index = kv.get_size("sample_index", 0);
  kv.reject_unknown();
  const SampleSet* set = nullptr;
  if (split == "train") {
    set = &data.train;
  } else if (split == "query") {
    set = &data.query;
  } else if (split == "gallery") {
    set = &data.gallery;
  } else {
    throw ConfigError("split must be train, query, or gallery, got '" + split + "'");
  }
  if (index >= set->size()) {
    throw ConfigError("sample_index " + std::to_string(index) + " out of range for " + split +
                      " split of " + std::to_string(set->size()));
  }
  const std::vector<std::size_t> one{index};
  const auto records = inspect(model, set->gather(one));
  write_inspect_csv(dir, records);
  for (const auto& r : records) {
    std::cout << "block " << r.block << " branch " << r.branch << ": threshold "
              << format_double(r.threshold) << ", " << r.nonzeros << "/" << r.adjacency.numel()
              << " entries kept\n";
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DSAM-GN training and retrieval on synthetic re-identification data"};
  app.require_subcommand(1);
  std::string config;
  struct Command {
    const char* name;
    const char* help;
    int (*run)(KeyValueConfig);
  };
  const Command commands[] = {
      {"gen-data", "Generate a synthetic dataset container", gen_data},
      {"train", "Train a model and write a checkpoint", train_cmd},
      {"eval", "Compute retrieval metrics for a checkpoint", eval_cmd},
      {"ablate", "Train one model per erasure percentile and compare", ablate_cmd},
      {"inspect", "Dump similarity and adjacency matrices for one sample", inspect_cmd},
  };
  std::vector<std::pair<CLI::App*, const Command*>> subs;
  for (const auto& c : commands) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    sub->add_option("--config", config, "key = value configuration file")->required();
    subs.emplace_back(sub, &c);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    for (const auto& [sub, cmd] : subs)
      if (sub->parsed()) return cmd->run(KeyValueConfig::load(config));
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kIo;
  } catch (const DimensionError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfig;
  }
  return kConfig;
}
