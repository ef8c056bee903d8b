#include <CLI11.hpp>
#include <json.hpp>

#include <atomic>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "detcal/calibrator.hpp"
#include "detcal/dataset.hpp"
#include "detcal/evaluator.hpp"
#include "detcal/network.hpp"
#include "detcal/persistence.hpp"
#include "detcal/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace detcal;

namespace {

struct TrainData {
  std::vector<TrainExample> examples;
  std::vector<int> truths;
};

TrainData build_examples(const DetectionMap& dets, const GroundTruth& gt,
                         const std::vector<LabeledExample>& labeled,
                         const EmbeddingStore* embeddings) {
  TrainData data;
  for (const auto& ex : labeled) {
    const auto& list = dets.at(ex.image_id);
    const ImageMeta& meta = gt.images.at(ex.image_id).meta;
    TrainExample te;
    te.rows = to_rowset(build_matrix(list, ex.target_index, meta));
    te.truth_label = ex.truth_label;
    if (embeddings && !embeddings->empty())
      te.embedding = embeddings->get(ex.image_id, list[ex.target_index].detection_id);
    data.examples.push_back(std::move(te));
    data.truths.push_back(ex.truth_label);
  }
  return data;
}

double macro_f1(const ModelParameters& params, const std::vector<TrainExample>& examples,
                int num_classes) {
  std::vector<int> pred, truth;
  for (const auto& ex : examples) {
    const auto res = forward(params, ex.rows, ex.embedding ? &*ex.embedding : nullptr);
    int best = 0;
    for (int c = 1; c < res.probs.size(); ++c)
      if (res.probs[c] > res.probs[best]) best = c;
    pred.push_back(best);
    truth.push_back(ex.truth_label);
  }
  return classification_report(pred, truth, num_classes).macro.f1;
}

int run_synth(const std::string& out_dir, int images, std::uint64_t seed, int classes) {
  fs::create_directories(out_dir);
  SceneModel model = SceneModel::pairs_default(classes, seed);
  SynthOutput out = generate(model, images);
  save_ground_truth(out.gt, out_dir + "/gt.json");
  save_detections(out.detections, out.gt.categories, out_dir + "/dets.json");
  write_file_atomic(out_dir + "/scene_model.json", model.to_json() + "\n");
  std::cerr << "wrote " << images << " scenes to " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"detcal: contextual calibration of object detector outputs"};
  app.set_config("--config", "", "plain-text key=value configuration file");
  app.require_subcommand(1);
  app.fallthrough();  // global options may follow the subcommand
  int threads = static_cast<int>(std::thread::hardware_concurrency());
  app.add_option("--threads", threads, "worker thread cap (results are thread-count independent)");

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic contextual dataset");
  std::string out_dir;
  int images = 100, classes = 10;
  std::uint64_t seed = 0;
  synth_cmd->add_option("--out", out_dir, "output directory")->required();
  synth_cmd->add_option("--images", images, "number of images")->required();
  synth_cmd->add_option("--seed", seed, "random seed");
  synth_cmd->add_option("--classes", classes, "number of object classes");

  // train
  auto* train_cmd = app.add_subcommand("train", "train a calibration model");
  std::string gt_path, dets_path, model_path, embeddings_path, arch_name = "set_cnn",
              pool_name = "masked";
  TrainConfig tc;
  tc.epochs = 5;
  int downsample = 10;
  double val_frac = 0.1;
  train_cmd->add_option("--gt", gt_path, "COCO ground-truth JSON")->required();
  train_cmd->add_option("--dets", dets_path, "COCO detection results JSON")->required();
  train_cmd->add_option("--out", model_path, "checkpoint output path")->required();
  train_cmd->add_option("--embeddings", embeddings_path, "embedding JSON-lines file");
  train_cmd->add_option("--arch", arch_name, "set_cnn|mlp")
      ->check(CLI::IsMember({"set_cnn", "mlp"}));
  train_cmd->add_option("--pool", pool_name, "masked|literal")
      ->check(CLI::IsMember({"masked", "literal"}));
  train_cmd->add_option("--lr", tc.learning_rate, "SGD learning rate");
  train_cmd->add_option("--epochs", tc.epochs, "training epochs");
  train_cmd->add_option("--batch", tc.batch_size, "minibatch size");
  train_cmd->add_option("--momentum", tc.momentum, "SGD momentum");
  train_cmd->add_option("--seed", tc.seed, "random seed");
  train_cmd->add_option("--downsample", downsample, "background downsampling factor");
  train_cmd->add_option("--val-frac", val_frac, "held-out validation fraction");

  // calibrate
  auto* cal_cmd = app.add_subcommand("calibrate", "apply the label/score update loop");
  std::string results_out, provenance_path;
  CalibrationConfig cc;
  cal_cmd->add_option("--model", model_path, "trained checkpoint")->required();
  cal_cmd->add_option("--dets", dets_path, "COCO detection results JSON")->required();
  cal_cmd->add_option("--gt", gt_path, "COCO JSON providing image sizes and categories")
      ->required();
  cal_cmd->add_option("--out", results_out, "calibrated results output path")->required();
  cal_cmd->add_option("--embeddings", embeddings_path, "embedding JSON-lines file");
  cal_cmd->add_option("--threshold", cc.label_threshold, "label swap threshold");
  cal_cmd->add_option("--provenance", provenance_path, "per-detection provenance JSON-lines");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "COCO-style evaluation");
  std::string report_path;
  bool with_classification = false;
  eval_cmd->add_option("--gt", gt_path, "COCO ground-truth JSON")->required();
  eval_cmd->add_option("--results", results_out, "COCO results JSON")->required();
  eval_cmd->add_option("--report", report_path, "report JSON output path")->required();
  eval_cmd->add_flag("--classification", with_classification,
                     "add per-class precision/recall/F1");

  auto* layout_cmd = app.add_subcommand("layout", "dump the feature layout as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;
  }

  try {
    if (*synth_cmd) return run_synth(out_dir, images, seed, classes);

    if (*layout_cmd) {
      std::cout << FeatureLayout::standard().to_json() << "\n";
      return 0;
    }

    if (*train_cmd) {
      const GroundTruth gt = load_ground_truth(gt_path);
      const DetectionMap dets = load_detections(dets_path, gt.categories, &gt);
      EmbeddingStore embeddings;
      if (!embeddings_path.empty()) embeddings = EmbeddingStore::load(embeddings_path);

      auto labeled = assign_truth_labels(dets, gt);
      labeled = downsample_background(labeled, downsample, tc.seed);

      // Deterministic validation split.
      std::vector<int> order(labeled.size());
      std::iota(order.begin(), order.end(), 0);
      std::mt19937_64 split_rng(tc.seed + 1);
      std::shuffle(order.begin(), order.end(), split_rng);
      const std::size_t n_val = static_cast<std::size_t>(val_frac * labeled.size());
      std::vector<LabeledExample> train_set, val_set;
      for (std::size_t i = 0; i < order.size(); ++i)
        (i < order.size() - n_val ? train_set : val_set).push_back(labeled[order[i]]);

      const EmbeddingStore* store = embeddings.empty() ? nullptr : &embeddings;
      TrainData train_data = build_examples(dets, gt, train_set, store);
      TrainData val_data = build_examples(dets, gt, val_set, store);

      Architecture arch =
          arch_name == "mlp" ? Architecture::mlp() : Architecture{};
      arch.pool = pool_name == "literal" ? PoolMode::kLiteral : PoolMode::kMasked;
      arch.embedding_dim = embeddings.empty() ? 0 : embeddings.dim();

      std::cerr << "training " << arch_name << " on " << train_data.examples.size()
                << " examples (" << val_data.examples.size() << " validation)\n";
      TrainResult result = train(init_parameters(arch, tc.seed), train_data.examples, tc);
      for (std::size_t e = 0; e < result.epoch_losses.size(); ++e)
        std::cerr << "epoch " << e << " loss " << result.epoch_losses[e] << "\n";

      save_checkpoint(result.params, model_path);
      json log;
      log["epoch_losses"] = result.epoch_losses;
      log["examples_train"] = train_data.examples.size();
      log["examples_val"] = val_data.examples.size();
      log["final_train_f1"] = macro_f1(result.params, train_data.examples, arch.num_classes);
      log["final_val_f1"] = val_data.examples.empty()
                                ? 0.0
                                : macro_f1(result.params, val_data.examples, arch.num_classes);
      write_file_atomic(model_path + ".train.json", log.dump(2) + "\n");
      return 0;
    }

    if (*cal_cmd) {
      const ModelParameters params = load_checkpoint(model_path);
      const GroundTruth gt = load_ground_truth(gt_path);
      const DetectionMap dets = load_detections(dets_path, gt.categories, &gt);
      EmbeddingStore embeddings;
      if (!embeddings_path.empty()) embeddings = EmbeddingStore::load(embeddings_path);
      const EmbeddingStore* store = embeddings.empty() ? nullptr : &embeddings;

      std::map<std::int64_t, ImageMeta> metas;
      for (const auto& [id, im] : gt.images) metas[id] = im.meta;

      // Images are independent; shard them over worker threads. The
      // per-image results are identical for any thread count.
      std::vector<std::int64_t> ids;
      for (const auto& [id, list] : dets) ids.push_back(id);
      std::vector<std::vector<CalibrationOutput>> results(ids.size());
      const int workers = std::max(1, std::min<int>(threads, static_cast<int>(ids.size())));
      std::vector<std::thread> pool;
      std::atomic<std::size_t> next{0};
      for (int w = 0; w < workers; ++w)
        pool.emplace_back([&] {
          for (std::size_t i = next.fetch_add(1); i < ids.size(); i = next.fetch_add(1))
            results[i] = calibrate_image(params, dets.at(ids[i]), metas.at(ids[i]), store, cc);
        });
      for (auto& t : pool) t.join();

      std::map<std::int64_t, std::vector<CalibrationOutput>> provenance;
      DetectionMap calibrated;
      for (std::size_t i = 0; i < ids.size(); ++i) {
        std::vector<Detection> updated = dets.at(ids[i]);
        for (std::size_t d = 0; d < updated.size(); ++d) {
          updated[d].class_label = results[i][d].label_pred;
          updated[d].score = results[i][d].score_pred;
        }
        calibrated[ids[i]] = std::move(updated);
        if (!provenance_path.empty()) provenance[ids[i]] = std::move(results[i]);
      }
      save_detections(calibrated, gt.categories, results_out);
      if (!provenance_path.empty()) {
        std::ostringstream os;
        for (const auto& [image_id, list] : provenance)
          for (std::size_t i = 0; i < list.size(); ++i)
            os << json{{"image_id", image_id},
                       {"target_index", i},
                       {"label_pred", list[i].label_pred},
                       {"score_pred", list[i].score_pred},
                       {"label_swapped", list[i].label_swapped},
                       {"iterations_run", list[i].iterations_run}}
                      .dump()
               << '\n';
        write_file_atomic(provenance_path, os.str());
      }
      return 0;
    }

    if (*eval_cmd) {
      const GroundTruth gt = load_ground_truth(gt_path);
      const DetectionMap results = load_detections(results_out, gt.categories, &gt);
      const ApReport ap = coco_ap(results, gt);

      json report = json::parse(ap_report_json(ap));
      std::cerr << ap_report_table(ap);
      if (with_classification) {
        std::vector<int> pred, truth;
        const auto labeled = assign_truth_labels(results, gt);
        for (const auto& ex : labeled) {
          pred.push_back(results.at(ex.image_id)[ex.target_index].class_label);
          truth.push_back(ex.truth_label);
        }
        const int num_classes = gt.categories.size() + 1;
        const auto cls = classification_report(pred, truth, num_classes);
        std::cerr << classification_report_table(cls);
        json per_class = json::array();
        for (const auto& m : cls.per_class)
          per_class.push_back({{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}});
        report["classification"] = {{"per_class", per_class},
                                    {"macro",
                                     {{"precision", cls.macro.precision},
                                      {"recall", cls.macro.recall},
                                      {"f1", cls.macro.f1}}}};
      }
      write_file_atomic(report_path, report.dump(2) + "\n");
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
