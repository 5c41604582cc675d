// Copyright 2026 The adipipe Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// adipipe: one subcommand per pipeline stage. Every run leaves a
// <output>.run.json (or <dir>/run.json) stanza with the seed, version and a
// hash of the resolved options.

#include <cctype>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "adipipe/adipipe.hpp"

namespace fs = std::filesystem;
using namespace adipipe;
using json = nlohmann::ordered_json;

namespace {

void note(const std::string& msg) { std::cerr << "adipipe: " << msg << "\n"; }

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (!std::isspace(static_cast<unsigned char>(c))) {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  detail::spit(path, text);
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  try {
    return json::parse(detail::slurp(path));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::data, path.string() + ": " + e.what());
  }
}

Split parse_split_flag(const std::string& s) {
  try {
    return parse_split(s);
  } catch (const Error& e) {
    fail(ErrorKind::config, e.what());
  }
}

/// Rows of `m` (and the matching rows of `bags`) whose split is `split`.
std::pair<Manifest, Matrix<double>> rows_of_split(const Manifest& m, const Matrix<double>& bags,
                                                  Split split) {
  Manifest out = m.like();
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < m.size(); ++i)
    if (m.records[i].split == split) {
      out.records.push_back(m.records[i]);
      keep.push_back(i);
    }
  Matrix<double> x(keep.size(), bags.cols());
  for (std::size_t i = 0; i < keep.size(); ++i)
    std::copy(bags.row(keep[i]).begin(), bags.row(keep[i]).end(), x.row(i).begin());
  return {out, x};
}

Matrix<double> read_bags(const fs::path& path, const Manifest& m) {
  auto bags = read_matrix(path).values;
  if (bags.rows() != m.size())
    fail(ErrorKind::data, path.string() + ": " + std::to_string(bags.rows()) +
                              " bag rows for " + std::to_string(m.size()) + " manifest records");
  return bags;
}

std::vector<FeatureMatrix> load_features(const Manifest& m, const fs::path& dir,
                                         unsigned workers) {
  std::vector<FeatureMatrix> out(m.size());
  parallel_for(m.size(), workers, [&](std::size_t i) {
    out[i] = read_features(feature_path(dir, m.records[i].utterance_id));
  });
  return out;
}

std::vector<std::size_t> targets_of(const Manifest& m, const std::vector<std::string>& labels) {
  return labeled_bags(m, std::vector<BagVector>(), labels).y;
}

/// Label set for evaluation: gold and predicted labels in manifest order.
std::vector<std::string> union_labels(const Manifest& a, const Manifest& b) {
  Manifest both = a.like();
  both.records = a.records;
  both.records.insert(both.records.end(), b.records.begin(), b.records.end());
  return labels_present(both, a.label_set);
}

// ---------------------------------------------------------------------------
// Run stanza

bool internal_option(const CLI::Option* o) {
  const auto& names = o->get_lnames();
  return names.empty() || names.front() == "help" || names.front() == "config" ||
         names.front() == "version";
}

json resolved_options(const CLI::App* app) {
  json j = json::object();
  for (const CLI::Option* o : app->get_options()) {
    if (internal_option(o)) continue;
    const auto& name = o->get_lnames().front();
    if (o->count() > 0) {
      const auto& r = o->results();
      j[name] = r.size() == 1 ? json(r.front()) : json(r);
    } else {
      j[name] = o->get_default_str();
    }
  }
  return j;
}

struct Stanza {
  std::string command;
  json options;
  std::uint64_t seed = 0;
};

Stanza describe_run(CLI::App& root, std::uint64_t seed) {
  Stanza s;
  s.seed = seed;
  s.options = json::object();
  s.options["global"] = resolved_options(&root);
  for (CLI::App* app = &root;;) {
    const auto subs = app->get_subcommands();
    if (subs.empty()) break;
    app = subs.front();
    s.command += (s.command.empty() ? "" : " ") + app->get_name();
    s.options[s.command] = resolved_options(app);
  }
  return s;
}

void write_stanza(const fs::path& output, const Stanza& s) {
  const fs::path path = fs::is_directory(output) ? output / "run.json"
                                                 : fs::path(output.string() + ".run.json");
  json j;
  j["command"] = s.command;
  j["version"] = kVersion;
  j["seed"] = s.seed;
  const std::string canonical = s.options.dump();
  char hash[24];
  std::snprintf(hash, sizeof hash, "%016llx",
                static_cast<unsigned long long>(fnv1a64(canonical)));
  j["config_hash"] = hash;
  j["options"] = s.options;
  write_json(path, j);
}

void set_env_names(CLI::App* app) {
  for (CLI::Option* o : app->get_options()) {
    if (internal_option(o)) continue;
    std::string env = "ADIPIPE_";
    for (char c : o->get_lnames().front())
      env += c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    o->envname(env);
  }
  for (CLI::App* sub : app->get_subcommands({})) set_env_names(sub);
}

using Runner = std::function<fs::path()>;

struct Globals {
  std::uint64_t seed = 0;
  unsigned workers = 1;
};

// ---------------------------------------------------------------------------
// Subcommands. Each registers a runner that returns its primary output.

void add_synth(CLI::App& app, const Globals& g, std::map<CLI::App*, Runner>& runners) {
  auto* cmd = app.add_subcommand("synth", "Write a synthetic Gaussian corpus");
  auto out = std::make_shared<std::string>();
  auto spec = std::make_shared<SyntheticSpec>();
  auto labels = std::make_shared<std::string>("EGY,JOR,KSA,MOR");
  cmd->add_option("--out", *out, "Output directory")->required();
  cmd->add_option("--per-class", spec->per_class, "Utterances per class");
  cmd->add_option("--dim", spec->dim, "Feature dimension");
  cmd->add_option("--labels", *labels, "Comma-separated class labels");
  runners[cmd] = [=, &g] {
    spec->labels = split_csv(*labels);
    spec->seed = g.seed;
    const auto corpus = make_synthetic_corpus(*spec);
    write_synthetic_corpus(corpus, fs::path(*out) / "manifest.jsonl",
                           fs::path(*out) / "features");
    note("wrote " + std::to_string(corpus.features.size()) + " utterances to " + *out);
    return fs::path(*out);
  };
}

void add_filter(CLI::App& app, std::map<CLI::App*, Runner>& runners) {
  auto* cmd = app.add_subcommand("filter", "Filter a manifest by duration, language score or split");
  struct Opts {
    std::string manifest, out, split;
    double min_duration = 0.0;
    std::optional<double> max_duration, min_language;
  };
  auto o = std::make_shared<Opts>();
  cmd->add_option("--manifest", o->manifest)->required();
  cmd->add_option("--out", o->out)->required();
  cmd->add_option("--min-duration", o->min_duration, "Keep duration > this (seconds)");
  cmd->add_option("--max-duration", o->max_duration, "Keep duration <= this (seconds)");
  cmd->add_option("--min-language-score", o->min_language, "Keep language_score >= this");
  cmd->add_option("--split", o->split, "Keep only this split");
  runners[cmd] = [=] {
    auto m = filter_by_duration(read_manifest(o->manifest), o->min_duration, o->max_duration);
    if (o->min_language) m = filter_language(m, *o->min_language);
    if (!o->split.empty()) m = filter_by_split(m, parse_split_flag(o->split));
    write_manifest(m, o->out);
    note("kept " + std::to_string(m.size()) + " records");
    return fs::path(o->out);
  };
}

void add_quantize(CLI::App& app, const Globals& g, std::map<CLI::App*, Runner>& runners) {
  auto* q = app.add_subcommand("quantize", "Codebook training and frame assignment");
  q->require_subcommand(1);

  struct TrainOpts {
    std::string manifest, features_dir, out_dir, split = "train";
    std::vector<std::size_t> k = {200};
    double fraction = 0.10;
    KMeansOptions km;
  };
  auto t = std::make_shared<TrainOpts>();
  auto* train = q->add_subcommand("train", "Fit one codebook per --k on a frame subsample");
  train->add_option("--manifest", t->manifest)->required();
  train->add_option("--features-dir", t->features_dir)->required();
  train->add_option("--k", t->k, "Cluster counts (repeat for a sweep)");
  train->add_option("--fraction", t->fraction, "Fraction of frames to subsample");
  train->add_option("--split", t->split, "Split to fit on, or 'all'");
  train->add_option("--n-init", t->km.n_init, "Restarts per codebook");
  train->add_option("--max-iters", t->km.max_iters);
  train->add_option("--tol", t->km.tol, "Mean centroid displacement to stop at");
  train->add_option("--out-dir", t->out_dir)->required();
  runners[train] = [=, &g] {
    Manifest m = read_manifest(t->manifest);
    if (t->split != "all") m = filter_by_split(m, parse_split_flag(t->split));
    const auto frames = subsample_frames(m, t->features_dir, t->fraction, g.seed);
    note("subsampled " + std::to_string(frames.rows()) + " frames");
    fs::create_directories(t->out_dir);
    auto km = t->km;
    km.workers = g.workers;
    for (std::size_t k : t->k) {
      const auto cb = train_kmeans(frames, k, g.seed, km);
      const auto path = fs::path(t->out_dir) / ("codebook_k" + std::to_string(k) + ".bin");
      write_codebook(cb, path);
      note("k=" + std::to_string(k) + " inertia " + format_general(cb.train_inertia) + " -> " +
           path.string());
    }
    return fs::path(t->out_dir);
  };

  struct AssignOpts {
    std::string manifest, features_dir, codebook, out;
  };
  auto a = std::make_shared<AssignOpts>();
  auto* assign_cmd = q->add_subcommand("assign", "Label every frame with its nearest centroid");
  assign_cmd->add_option("--manifest", a->manifest)->required();
  assign_cmd->add_option("--features-dir", a->features_dir)->required();
  assign_cmd->add_option("--codebook", a->codebook)->required();
  assign_cmd->add_option("--out", a->out, "Label sequences (JSONL)")->required();
  runners[assign_cmd] = [=, &g] {
    const auto m = read_manifest(a->manifest);
    const auto cb = read_codebook(a->codebook);
    std::vector<LabelSequence> seqs(m.size());
    parallel_for(m.size(), g.workers, [&](std::size_t i) {
      const auto path = feature_path(a->features_dir, m.records[i].utterance_id);
      try {
        seqs[i] = assign(cb, read_features(path));
      } catch (const Error& e) {
        if (std::string(e.what()).rfind(path.string(), 0) == 0) throw;
        fail(e.kind(), path.string() + ": " + e.what());
      }
    });
    write_label_sequences(seqs, a->out);
    note("assigned " + std::to_string(seqs.size()) + " utterances");
    return fs::path(a->out);
  };
}

void add_bag(CLI::App& app, std::map<CLI::App*, Runner>& runners) {
  auto* cmd = app.add_subcommand("bag", "Bag-of-labels vectors, one row per manifest record");
  struct Opts {
    std::string manifest, labels, out;
    std::size_t k = 0;
  };
  auto o = std::make_shared<Opts>();
  cmd->add_option("--manifest", o->manifest)->required();
  cmd->add_option("--labels", o->labels, "Label sequences from 'quantize assign'")->required();
  cmd->add_option("--k", o->k, "Codebook size")->required();
  cmd->add_option("--out", o->out, "Bag matrix (N x k)")->required();
  runners[cmd] = [=] {
    const auto m = read_manifest(o->manifest);
    std::map<std::string, LabelSequence> by_id;
    for (auto& s : read_label_sequences(o->labels)) by_id[s.utterance_id] = std::move(s);
    std::vector<BagVector> bags;
    for (const auto& r : m.records) {
      auto it = by_id.find(r.utterance_id);
      if (it == by_id.end())
        fail(ErrorKind::data, o->labels + ": no label sequence for '" + r.utterance_id + "'");
      bags.push_back(bag_of_labels(it->second, o->k));
    }
    write_matrix(o->out, stack_bags(bags));
    return fs::path(o->out);
  };
}

TrainConfig tap_config_from(const std::optional<std::string>& path, const TrainConfig& flags,
                            bool batch_given) {
  TrainConfig c = flags;
  if (path) {
    auto j = read_json(*path);
    if (j.contains("config")) j = j["config"];  // a journal or ranking row
    c = config_from_json(j);
  } else if (!batch_given) {
    c.batch_size = batch_size_for(c.duration_s);
  }
  for (const auto& v : c.violations()) note("warning: config " + v);
  return c;
}

void add_train(CLI::App& app, const Globals& g, std::map<CLI::App*, Runner>& runners) {
  auto* cmd = app.add_subcommand("train", "Train a bag classifier or a TAP head");
  struct Opts {
    std::string model = "linear", manifest, out, features_dir;
    std::vector<std::string> bags;
    bool grid = false;
    LinearTrainConfig linear;
    TrainConfig tap;
    std::optional<std::string> tap_config;
    TapOptions tap_opts;
  };
  auto o = std::make_shared<Opts>();
  o->tap.batch_size = 0;
  o->tap.freeze_steps = 192;
  o->tap.learning_rate = 6e-4;
  o->tap.max_steps = 29225;
  o->tap.duration_s = 4.69;
  o->tap.thaw_depth = 3;
  cmd->add_option("--model", o->model, "linear or tap")
      ->check(CLI::IsMember({"linear", "tap"}));
  cmd->add_option("--manifest", o->manifest, "Labeled records; train/dev by split")->required();
  cmd->add_option("--out", o->out, "Model directory")->required();
  cmd->add_option("--bags", o->bags, "Bag matrices aligned with the manifest (linear)");
  cmd->add_flag("--grid", o->grid, "Search batch x lr (x k over several --bags) on dev");
  cmd->add_option("--batch-size", o->linear.batch_size, "Linear batch size");
  cmd->add_option("--lr", o->linear.learning_rate, "Linear learning rate");
  cmd->add_option("--epochs", o->linear.epochs);
  cmd->add_option("--patience", o->linear.patience, "Dev early-stopping patience");
  cmd->add_option("--features-dir", o->features_dir, "Frames (tap)");
  cmd->add_option("--train-config", o->tap_config, "TrainConfig JSON, e.g. a search row (tap)");
  auto* tap_batch = cmd->add_option("--tap-batch-size", o->tap.batch_size,
                                    "Default 4*floor(75/duration)");
  cmd->add_option("--tap-lr", o->tap.learning_rate);
  cmd->add_option("--max-steps", o->tap.max_steps);
  cmd->add_option("--freeze-steps", o->tap.freeze_steps);
  cmd->add_option("--duration", o->tap.duration_s, "Crop length in seconds");
  cmd->add_option("--step-scale", o->tap_opts.step_scale, "Shrink max/freeze steps");
  cmd->add_option("--projection-dim", o->tap_opts.projection_dim);
  runners[cmd] = [=, &g] {
    const auto m = read_manifest(o->manifest);
    const auto train = filter_by_split(m, Split::train);
    const auto labels = labels_present(train, m.label_set);
    if (o->model == "tap") {
      if (o->features_dir.empty()) fail(ErrorKind::config, "--features-dir is required for tap");
      auto cfg = tap_config_from(o->tap_config, o->tap, tap_batch->count() > 0);
      cfg.seed = g.seed;
      const auto feats = load_features(train, o->features_dir, g.workers);
      const auto r = train_tap(feats, targets_of(train, labels), labels, cfg, o->tap_opts);
      note("tap: " + std::to_string(r.steps) + " steps, final batch loss " +
           format_general(r.loss_history.back()));
      save_model(r.head, o->out, cfg);
      return fs::path(o->out);
    }

    if (o->bags.empty()) fail(ErrorKind::config, "--bags is required for linear");
    if (o->bags.size() > 1 && !o->grid)
      fail(ErrorKind::config, "several --bags only make sense with --grid");
    if (o->grid) {
      std::map<std::size_t, BagSplits> by_k;
      for (const auto& path : o->bags) {
        const auto all = read_bags(path, m);
        const auto [tm, tx] = rows_of_split(m, all, Split::train);
        const auto [dm, dx] = rows_of_split(m, all, Split::dev);
        if (dm.empty()) fail(ErrorKind::data, "--grid needs dev records in the manifest");
        by_k[all.cols()] = {labeled_bags(tm, {}, labels), labeled_bags(dm, {}, labels)};
        by_k[all.cols()].train.x = tx;
        by_k[all.cols()].dev.x = dx;
      }
      GridAxes axes;
      axes.epochs = o->linear.epochs;
      axes.patience = o->linear.patience;
      axes.seed = g.seed;
      const auto r = grid_search_linear(by_k, labels, axes);
      note("grid best: k=" + std::to_string(r.best.k) + " batch=" +
           std::to_string(r.best.batch_size) + " lr=" + format_general(r.best.learning_rate) +
           " dev macro-F1 " + format_score(r.best.dev_macro_f1));
      save_model(r.model, o->out);
      std::string rows;
      for (const auto& c : r.evaluations)
        rows += json{{"k", c.k}, {"batch_size", c.batch_size},
                     {"learning_rate", c.learning_rate}, {"dev_macro_f1", c.dev_macro_f1}}
                    .dump() +
                "\n";
      write_text(fs::path(o->out) / "grid.jsonl", rows);
      return fs::path(o->out);
    }

    const auto all = read_bags(o->bags.front(), m);
    auto [tm, tx] = rows_of_split(m, all, Split::train);
    auto [dm, dx] = rows_of_split(m, all, Split::dev);
    auto cfg = o->linear;
    cfg.seed = g.seed;
    LabeledBags dev{dx, {}};
    if (!dm.empty()) dev.y = targets_of(dm, labels);
    const auto r = train_linear(tx, targets_of(tm, labels), labels, cfg,
                                dm.empty() ? nullptr : &dev);
    note("linear: " + std::to_string(r.epochs_run) + " epochs, final loss " +
         format_general(r.final_loss));
    save_model(r.model, o->out);
    return fs::path(o->out);
  };
}

void add_predict(CLI::App& app, const Globals& g, std::map<CLI::App*, Runner>& runners) {
  auto* cmd = app.add_subcommand("predict", "Predicted label and confidence per record");
  struct Opts {
    std::string model, manifest, out, bags, features_dir, codebook, split;
  };
  auto o = std::make_shared<Opts>();
  cmd->add_option("--model", o->model, "Model directory")->required();
  cmd->add_option("--manifest", o->manifest)->required();
  cmd->add_option("--out", o->out, "Predictions manifest")->required();
  cmd->add_option("--bags", o->bags, "Bag matrix aligned with the manifest (linear)");
  cmd->add_option("--features-dir", o->features_dir);
  cmd->add_option("--codebook", o->codebook, "Bags are computed from frames (linear)");
  cmd->add_option("--split", o->split, "Predict only this split");
  runners[cmd] = [=, &g] {
    auto m = read_manifest(o->manifest);
    const auto model = load_model(o->model);
    std::vector<Prediction> preds(m.size());
    if (const auto* lin = std::get_if<LinearModel>(&model)) {
      Matrix<double> x;
      if (!o->bags.empty()) {
        x = read_bags(o->bags, m);
      } else if (!o->codebook.empty() && !o->features_dir.empty()) {
        x = stack_bags(bag_manifest(m, o->features_dir, read_codebook(o->codebook), g.workers));
      } else {
        fail(ErrorKind::config, "linear models need --bags or --codebook with --features-dir");
      }
      for (std::size_t i = 0; i < m.size(); ++i)
        preds[i] = predict(*lin, m.records[i].utterance_id, x.row(i));
    } else {
      if (o->features_dir.empty()) fail(ErrorKind::config, "tap models need --features-dir");
      const auto& head = std::get<TapHead>(model);
      parallel_for(m.size(), g.workers, [&](std::size_t i) {
        preds[i] = predict(head, read_features(feature_path(o->features_dir,
                                                            m.records[i].utterance_id)));
      });
    }
    auto out = attach_predictions(m, preds);
    if (!o->split.empty()) out = filter_by_split(out, parse_split_flag(o->split));
    write_manifest(out, o->out);
    return fs::path(o->out);
  };
}

void add_surrogate(CLI::App& app, std::map<CLI::App*, Runner>& runners) {
  auto* cmd = app.add_subcommand("surrogate", "Label every record with its collection country");
  auto manifest = std::make_shared<std::string>(), out = std::make_shared<std::string>();
  cmd->add_option("--manifest", *manifest)->required();
  cmd->add_option("--out", *out)->required();
  runners[cmd] = [=] {
    write_manifest(surrogate_label(read_manifest(*manifest)), *out);
    return fs::path(*out);
  };
}

void add_bucket(CLI::App& app, std::map<CLI::App*, Runner>& runners) {
  auto* cmd = app.add_subcommand("bucket", "Low/medium/high confidence buckets");
  struct Opts {
    std::string predictions, out, thresholds_in, thresholds_out, fit_sample = "all";
  };
  auto o = std::make_shared<Opts>();
  cmd->add_option("--predictions", o->predictions)->required();
  cmd->add_option("--out", o->out)->required();
  cmd->add_option("--thresholds", o->thresholds_in, "Reuse thresholds instead of fitting");
  cmd->add_option("--thresholds-out", o->thresholds_out);
  cmd->add_option("--fit-sample", o->fit_sample, "all, or matched (prediction = country)")
      ->check(CLI::IsMember({"all", "matched"}));
  runners[cmd] = [=] {
    const auto m = read_manifest(o->predictions);
    BucketThresholds t;
    if (!o->thresholds_in.empty()) {
      t = thresholds_from_json(read_json(o->thresholds_in));
    } else {
      Manifest sample = m.like();
      for (const auto& r : m.records)
        if (o->fit_sample == "all" || (r.label && r.country && *r.label == *r.country))
          sample.records.push_back(r);
      t = fit_thresholds(confidences_of(sample), o->fit_sample);
    }
    const auto out = bucket(m, t);
    write_manifest(out, o->out);
    if (!o->thresholds_out.empty()) write_json(o->thresholds_out, to_json(t));
    std::cout << render_thresholds(t);
    return fs::path(o->out);
  };
}

void add_assemble(CLI::App& app, std::map<CLI::App*, Runner>& runners) {
  auto* cmd = app.add_subcommand("assemble", "Base training set plus one self-training setting");
  struct Opts {
    std::string base, pool, out, setting = "high";
  };
  auto o = std::make_shared<Opts>();
  cmd->add_option("--base", o->base)->required();
  cmd->add_option("--pool", o->pool, "Bucketed or surrogate-labeled pool")->required();
  cmd->add_option("--setting", o->setting)
      ->check(CLI::IsMember({"surrogate", "low", "medium", "high"}));
  cmd->add_option("--out", o->out)->required();
  runners[cmd] = [=] {
    const auto set = assemble_selftrain(read_manifest(o->base), read_manifest(o->pool),
                                        parse_bucket(o->setting));
    write_manifest(set.concatenated(), o->out);
    note("added " + std::to_string(set.added.size()) + " " + o->setting + " records");
    return fs::path(o->out);
  };
}

void add_eval(CLI::App& app, std::map<CLI::App*, Runner>& runners) {
  auto* cmd = app.add_subcommand("eval", "Macro-F1, accuracy and confusion against gold labels");
  struct Opts {
    std::string gold, predictions, out, labels, split;
    bool pool = false, msa = false;
  };
  auto o = std::make_shared<Opts>();
  cmd->add_option("--gold", o->gold, "Manifest with gold labels")->required();
  cmd->add_option("--predictions", o->predictions)->required();
  cmd->add_option("--out", o->out, "Report JSON")->required();
  cmd->add_option("--split", o->split, "Score only this split of the gold manifest");
  cmd->add_option("--labels", o->labels, "Comma-separated classes to average over");
  cmd->add_flag("--pool-regions", o->pool, "Score at region level");
  cmd->add_flag("--msa-passthrough", o->msa, "Keep MSA as a fifth region");
  runners[cmd] = [=] {
    auto gold = read_manifest(o->gold);
    if (!o->split.empty()) gold = filter_by_split(gold, parse_split_flag(o->split));
    const auto pred = read_manifest(o->predictions);
    std::map<std::string, const UtteranceRecord*> by_id;
    for (const auto& r : pred.records) by_id[r.utterance_id] = &r;
    std::vector<std::string> g, p;
    Manifest matched = pred.like();
    for (const auto& r : gold.records) {
      auto it = by_id.find(r.utterance_id);
      if (it == by_id.end() || !it->second->label)
        fail(ErrorKind::data, "no prediction for '" + r.utterance_id + "'");
      if (!r.label) fail(ErrorKind::data, "no gold label for '" + r.utterance_id + "'");
      g.push_back(*r.label);
      p.push_back(*it->second->label);
      matched.records.push_back(*it->second);
    }
    EvalReport rep;
    if (o->pool) {
      const auto regions = RegionMap::adi5();
      const auto classes = RegionMap::regions(o->msa);
      std::optional<std::vector<std::string>> avg;
      if (!o->labels.empty()) avg = split_csv(o->labels);
      rep = macro_f1(pool_regions(g, regions, o->msa), pool_regions(p, regions, o->msa),
                     classes, avg);
    } else {
      const auto classes = union_labels(gold, matched);
      auto avg = o->labels.empty() ? labels_present(gold, gold.label_set) : split_csv(o->labels);
      rep = macro_f1(g, p, classes, avg);
    }
    write_json(o->out, to_json(rep));
    std::cout << "macro-F1 " << format_score(rep.macro_f1) << "  accuracy "
              << format_score(rep.accuracy) << "  n=" << rep.n_samples << "\n";
    return fs::path(o->out);
  };
}

void add_agreement(CLI::App& app, std::map<CLI::App*, Runner>& runners) {
  auto* cmd = app.add_subcommand("agreement", "How often predictions match the collection country");
  auto preds = std::make_shared<std::string>(), out = std::make_shared<std::string>();
  cmd->add_option("--predictions", *preds)->required();
  cmd->add_option("--out", *out)->required();
  runners[cmd] = [=] {
    const auto rep = agreement_report(read_manifest(*preds));
    write_json(*out, to_json(rep));
    std::cout << rep.match_count << "/" << rep.total << " match ("
              << format_percent(rep.match_fraction) << ")\n";
    return fs::path(*out);
  };
}

void add_audit(CLI::App& app, const Globals& g, std::map<CLI::App*, Runner>& runners) {
  auto* cmd = app.add_subcommand("audit", "Annotation sheet of mismatched predictions");
  struct Opts {
    std::string predictions, out, labels = "UAE,JOR,MOR,SUD";
    std::size_t per_label = 25;
  };
  auto o = std::make_shared<Opts>();
  cmd->add_option("--predictions", o->predictions)->required();
  cmd->add_option("--per-label", o->per_label);
  cmd->add_option("--labels", o->labels, "Comma-separated countries");
  cmd->add_option("--out", o->out, "TSV sheet")->required();
  runners[cmd] = [=, &g] {
    const auto s =
        human_audit_sample(read_manifest(o->predictions), o->per_label, split_csv(o->labels), g.seed);
    write_text(o->out, annotation_sheet(s));
    return fs::path(o->out);
  };
}

void add_search(CLI::App& app, const Globals& g, std::map<CLI::App*, Runner>& runners) {
  auto* cmd = app.add_subcommand("search", "Random search of TAP head configs scored on dev");
  struct Opts {
    std::string manifest, features_dir, journal, out;
    std::size_t budget = 30;
    bool resume = false;
    TapOptions tap;
  };
  auto o = std::make_shared<Opts>();
  cmd->add_option("--manifest", o->manifest, "Records with train and dev splits")->required();
  cmd->add_option("--features-dir", o->features_dir)->required();
  cmd->add_option("--budget", o->budget, "Configs to evaluate");
  cmd->add_option("--journal", o->journal, "Completed evaluations (JSONL)")->required();
  cmd->add_flag("--resume", o->resume, "Skip configs already in the journal");
  cmd->add_option("--step-scale", o->tap.step_scale, "Shrink max/freeze steps");
  cmd->add_option("--projection-dim", o->tap.projection_dim);
  cmd->add_option("--out", o->out, "Ranked results (JSONL)")->required();
  runners[cmd] = [=, &g] {
    const auto m = read_manifest(o->manifest);
    const auto train = filter_by_split(m, Split::train), dev = filter_by_split(m, Split::dev);
    if (dev.empty()) fail(ErrorKind::data, "search needs dev records to score on");
    const auto labels = labels_present(train, m.label_set);
    const auto train_x = load_features(train, o->features_dir, g.workers);
    const auto dev_x = load_features(dev, o->features_dir, g.workers);
    const auto train_y = targets_of(train, labels);
    std::vector<std::string> dev_gold;
    for (const auto& r : dev.records) dev_gold.push_back(r.label.value_or(""));
    const auto eval_labels = union_labels(train, dev);

    auto objective = [&](const TrainConfig& cfg) {
      const auto r = train_tap(train_x, train_y, labels, cfg, o->tap);
      std::vector<std::string> guessed;
      for (const auto& f : dev_x) guessed.push_back(predict(r.head, f).predicted_label);
      return macro_f1(dev_gold, guessed, eval_labels).macro_f1;
    };
    SearchOptions so;
    so.journal = o->journal;
    so.resume = o->resume;
    so.workers = g.workers;
    so.log = note;
    const auto results = run_search(objective, o->budget, g.seed, so);
    std::string rows;
    for (const auto& r : results) rows += to_json(r).dump() + "\n";
    write_text(o->out, rows);
    note("best dev macro-F1 " + format_score(results.front().score) + " (config " +
         std::to_string(results.front().config.index) + ")");
    return fs::path(o->out);
  };
}

void add_report(CLI::App& app, std::map<CLI::App*, Runner>& runners) {
  auto* rep = app.add_subcommand("report", "Result tables and corpus statistics");
  rep->require_subcommand(1);

  struct TableOpts {
    std::vector<std::string> entries;
    std::string out;
  };
  auto t = std::make_shared<TableOpts>();
  auto* table = rep->add_subcommand("table", "Markdown table of eval reports");
  table->add_option("--entry", t->entries, "MODEL:DATASET:REPORT_JSON (repeatable)")->required();
  table->add_option("--out", t->out)->required();
  runners[table] = [=] {
    std::vector<NamedReport> reports;
    for (const auto& e : t->entries) {
      const auto a = e.find(':'), b = e.find(':', a == std::string::npos ? a : a + 1);
      if (a == std::string::npos || b == std::string::npos)
        fail(ErrorKind::config, "--entry must look like MODEL:DATASET:PATH, got '" + e + "'");
      const auto j = read_json(e.substr(b + 1));
      NamedReport r{e.substr(0, a), e.substr(a + 1, b - a - 1), {}};
      r.report.macro_f1 = j.at("macro_f1").get<double>();
      r.report.accuracy = j.at("accuracy").get<double>();
      r.report.n_samples = j.at("n_samples").get<std::size_t>();
      reports.push_back(std::move(r));
    }
    const auto text = report_table(reports);
    write_text(t->out, text);
    std::cout << text;
    return fs::path(t->out);
  };

  struct PipelineOpts {
    std::string manifest, out;
    double min_duration = 0.0, min_language = kDefaultLanguageThreshold;
  };
  auto p = std::make_shared<PipelineOpts>();
  auto* pipe = rep->add_subcommand("pipeline", "Per-stage counts and retention");
  pipe->add_option("--manifest", p->manifest, "Segments with language scores")->required();
  pipe->add_option("--min-duration", p->min_duration);
  pipe->add_option("--min-language-score", p->min_language);
  pipe->add_option("--out", p->out)->required();
  runners[pipe] = [=] {
    const auto stages = pipeline_report(read_manifest(p->manifest), p->min_duration, p->min_language);
    write_json(p->out, to_json(stages));
    for (const auto& s : stages)
      std::cout << s.stage << ": " << s.in << " -> " << s.out << " ("
                << format_percent(s.retention()) << ")\n";
    return fs::path(p->out);
  };

  auto cin = std::make_shared<std::string>(), cout_path = std::make_shared<std::string>();
  auto* chan = rep->add_subcommand("channels", "Per-channel Gulf share of predictions");
  chan->add_option("--predictions", *cin)->required();
  chan->add_option("--out", *cout_path)->required();
  runners[chan] = [=] {
    json rows = json::array();
    for (const auto& s : gulf_channel_report(read_manifest(*cin)))
      rows.push_back({{"channel", s.channel},
                      {"n", s.n},
                      {"label_entropy", s.label_entropy},
                      {"gulf_share", s.gulf_share},
                      {"flagged", s.flagged}});
    write_json(*cout_path, rows);
    return fs::path(*cout_path);
  };
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Arabic dialect identification pipeline tools", "adipipe"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "TOML/INI file; command-line flags take precedence");
  app.set_version_flag("--version", kVersion);

  Globals g;
  app.add_option("--seed", g.seed, "Seed for every random choice");
  app.add_option("--workers", g.workers, "Parallel workers for per-utterance stages")
      ->check(CLI::PositiveNumber);

  std::map<CLI::App*, Runner> runners;
  add_synth(app, g, runners);
  add_filter(app, runners);
  add_quantize(app, g, runners);
  add_bag(app, runners);
  add_train(app, g, runners);
  add_predict(app, g, runners);
  add_surrogate(app, runners);
  add_bucket(app, runners);
  add_assemble(app, runners);
  add_eval(app, runners);
  add_agreement(app, runners);
  add_audit(app, g, runners);
  add_search(app, g, runners);
  add_report(app, runners);
  set_env_names(&app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : exit_code(ErrorKind::config);
  }

  CLI::App* leaf = &app;
  while (!leaf->get_subcommands().empty()) leaf = leaf->get_subcommands().front();
  try {
    const auto output = runners.at(leaf)();
    write_stanza(output, describe_run(app, g.seed));
    return 0;
  } catch (const Error& e) {
    note(e.what());
    return exit_code(e.kind());
  } catch (const nlohmann::json::exception& e) {
    note(e.what());
    return exit_code(ErrorKind::data);
  } catch (const std::exception& e) {
    note(e.what());
    return exit_code(ErrorKind::data);
  }
}
