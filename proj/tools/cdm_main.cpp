#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "cdm/experiments.hpp"

namespace {

void set_width(std::optional<std::size_t>& slot, std::size_t value) {
  if (value > 0) slot = value;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Identifiable cognitive diagnosis: training and evaluation pipelines"};
  app.set_config("--config", "", "Flat key=value file; keys are the long option names");
  app.require_subcommand(1);
  app.fallthrough();

  cdm::RunConfig cfg;
  std::string dataset_dir;
  std::string out_dir = cfg.out_dir.string();
  std::string checkpoint;
  std::string models = "idcdm";
  std::string shadow = "none";
  double lr = 0.0;
  std::size_t learner_hidden = 0, question_hidden1 = 0, question_hidden2 = 0, aggregate_dim = 0;
  std::size_t predictor_hidden1 = 0, predictor_hidden2 = 0, mirt_dim = 0, ncdm_hidden1 = 0, ncdm_hidden2 = 0;

  app.add_option("--seed", cfg.seed, "Seed for splitting, initialisation and batch order")->capture_default_str();
  app.add_option("--model", models,
                 "Comma-separated models: idcdm, idcdm-nmono, idcdm-nenc, ncdm, ncdm-const, irt, mirt, dina")
      ->capture_default_str();
  app.add_option("--dataset-dir", dataset_dir, "Directory with logs.csv and q_matrix.csv");
  app.add_flag("--synthetic", cfg.synthetic, "Use the built-in synthetic exam dataset instead of --dataset-dir");
  app.add_option("--out-dir", out_dir, "Output directory")->capture_default_str();
  app.add_option("--from-checkpoint", checkpoint, "Evaluate a saved checkpoint instead of training");

  app.add_option("--min-logs", cfg.min_logs, "Drop learners with fewer logs")->capture_default_str();
  app.add_option("--first-attempt-only", cfg.first_attempt_only,
                 "Keep the first attempt per pair (false: majority score)")
      ->capture_default_str();
  app.add_option("--max-learners", cfg.max_learners, "Keep only the first n learners (0: all)")->capture_default_str();
  app.add_option("--test-ratio", cfg.test_ratio, "Per-learner test fraction")->capture_default_str();
  app.add_option("--val-ratio", cfg.val_ratio, "Validation fraction of the remaining logs")->capture_default_str();

  app.add_option("--lr", lr, "Adam learning rate for every model (0: preset, 0.0002 for ID-CDM variants, 0.002 otherwise)")
      ->capture_default_str();
  app.add_option("--batch-size", cfg.train.batch_size, "Mini-batch size")->capture_default_str()->check(
      CLI::PositiveNumber);
  app.add_option("--max-epochs", cfg.train.max_epochs, "Epoch limit")->capture_default_str();
  app.add_option("--patience", cfg.train.patience, "Early-stopping patience in epochs")->capture_default_str()->check(
      CLI::PositiveNumber);
  app.add_flag("--verbose", cfg.train.verbose, "Log per-epoch progress to stderr");

  app.add_option("--learner-hidden", learner_hidden, "ID-CDM learner encoder width (0: preset 256)");
  app.add_option("--question-hidden1", question_hidden1, "ID-CDM question encoder first width (0: preset 256)");
  app.add_option("--question-hidden2", question_hidden2, "ID-CDM question encoder second width (0: preset 128)");
  app.add_option("--aggregate-dim", aggregate_dim, "ID-CDM aggregation width (0: preset 64)");
  app.add_option("--predictor-hidden1", predictor_hidden1, "ID-CDM predictor first width (0: preset 128)");
  app.add_option("--predictor-hidden2", predictor_hidden2, "ID-CDM predictor second width (0: preset 64)");
  app.add_option("--mirt-dim", mirt_dim, "MIRT latent dimension (0: preset 16)");
  app.add_option("--ncdm-hidden1", ncdm_hidden1, "NCDM interaction first width (0: preset 128)");
  app.add_option("--ncdm-hidden2", ncdm_hidden2, "NCDM interaction second width (0: preset 64)");

  app.add_option("--shadow", shadow, "train: shadow augmentation (none, learner, question)")->capture_default_str();
  app.add_option("--repeats", cfg.repeats, "rq1: seeds per model, starting at --seed")->capture_default_str();
  app.add_option("--bin-width", cfg.bin_width, "rq1: histogram bin width")->capture_default_str();

  app.add_option("--synth-learners", cfg.synth.learners, "Synthetic learners")->capture_default_str();
  app.add_option("--synth-questions", cfg.synth.questions, "Synthetic questions")->capture_default_str();
  app.add_option("--synth-concepts", cfg.synth.concepts, "Synthetic concepts")->capture_default_str();
  app.add_option("--synth-correct-rate", cfg.synth.correct_rate, "Synthetic target correct rate")
      ->capture_default_str();
  app.add_option("--synth-disc-lo", cfg.synth.discrimination_lo, "Synthetic lowest discrimination")
      ->capture_default_str();
  app.add_option("--synth-disc-hi", cfg.synth.discrimination_hi, "Synthetic highest discrimination")
      ->capture_default_str();
  app.add_option("--synth-concept-noise", cfg.synth.concept_noise, "Synthetic concept-specific spread")
      ->capture_default_str();
  app.add_option("--synth-seed", cfg.synth.seed, "Synthetic generator seed")->capture_default_str();

  auto* train = app.add_subcommand("train", "Preprocess, split and train; writes checkpoint and reports");
  auto* rq1 = app.add_subcommand("rq1", "Identifiability scores on shadow-augmented data");
  auto* rq2 = app.add_subcommand("rq2", "DOC on fit and test logs, and REO");
  auto* rq3 = app.add_subcommand("rq3", "Test-set ACC, RMSE and F1");
  auto* exp = app.add_subcommand("export", "Write learner traits and question parameters of a checkpoint");
  auto* synth = app.add_subcommand("synth", "Write the synthetic dataset as logs.csv and q_matrix.csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    cfg.dataset_dir = dataset_dir;
    cfg.out_dir = out_dir;
    if (!checkpoint.empty()) cfg.from_checkpoint = checkpoint;
    cfg.shadow = cdm::parse_shadow_mode(shadow);
    if (lr > 0.0) cfg.learning_rate = lr;
    cfg.models.clear();
    for (const auto& name : CLI::detail::split(models, ',')) {
      const auto trimmed = CLI::detail::trim_copy(name);
      if (!trimmed.empty()) cfg.models.push_back(trimmed);
    }
    set_width(cfg.widths.learner_hidden, learner_hidden);
    set_width(cfg.widths.question_hidden1, question_hidden1);
    set_width(cfg.widths.question_hidden2, question_hidden2);
    set_width(cfg.widths.aggregate_dim, aggregate_dim);
    set_width(cfg.widths.predictor_hidden1, predictor_hidden1);
    set_width(cfg.widths.predictor_hidden2, predictor_hidden2);
    set_width(cfg.widths.mirt_dim, mirt_dim);
    set_width(cfg.widths.ncdm_hidden1, ncdm_hidden1);
    set_width(cfg.widths.ncdm_hidden2, ncdm_hidden2);
    for (const auto& name : cfg.models) (void)cdm::model_config_for(name);

    if (*train) {
      cdm::cmd_train(cfg);
    } else if (*rq1) {
      cdm::cmd_rq1(cfg);
    } else if (*rq2) {
      for (const auto& r : cdm::cmd_rq2(cfg)) {
        std::cout << r.model << " doc_train " << r.doc_train << " doc_test " << r.doc_test << " reo " << r.reo
                  << '\n';
      }
    } else if (*rq3) {
      for (const auto& r : cdm::cmd_rq3(cfg)) {
        std::cout << r.model << " acc " << r.metrics.acc << " rmse " << r.metrics.rmse << " f1 " << r.metrics.f1
                  << '\n';
      }
    } else if (*exp) {
      cdm::cmd_export(cfg);
    } else if (*synth) {
      cdm::cmd_synth(cfg);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return EXIT_FAILURE;
  }
  return EXIT_SUCCESS;
}
