#include <doctest.h>

#include <cmath>

#include "tim/io.hpp"
#include "tim/synthetic.hpp"
#include "tim/training.hpp"

using namespace tim;

namespace {

TrainConfig quick_config(const Schema& schema, int epochs) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = 8;
  cfg.target_lr = 1e-3;
  cfg.warmup_epochs = epochs > 1 ? 1 : 0;
  cfg.seed = 42;
  cfg.weights = LossWeights::defaults_for(schema);
  cfg.weights.modality.assign(schema.modalities.size(), 1.0);
  return cfg;
}

ModelConfig tiny_model_config(const Schema& schema) {
  ModelConfig cfg;
  cfg.embed_dim = 16;
  cfg.encoder_layers = 2;
  cfg.attention_heads = 2;
  cfg.time_mlp_hidden = 16;
  cfg.td_head_hidden = 16;
  cfg.schema = schema;
  return cfg;
}

SynthConfig tiny_synth() {
  SynthConfig cfg;
  cfg.videos = 6;
  cfg.video_length_s = 24.0;
  cfg.visual_classes = 3;
  cfg.audio_classes = 3;
  cfg.visual_feature_dim = 8;
  cfg.audio_feature_dim = 8;
  cfg.event_rate_hz = 0.15;
  cfg.min_duration_s = 1.0;
  cfg.max_duration_s = 3.0;
  cfg.noise_sigma = 0.05;
  return cfg;
}

WindowSpec tiny_window() {
  WindowSpec spec;
  spec.window_s = 12.0;
  spec.window_stride_s = 6.0;
  spec.features_per_modality = 10;
  spec.feature_stride_s = 1.2;
  return spec;
}

}  // namespace

TEST_CASE("learning rate schedule") {
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.warmup_epochs = 2;
  cfg.target_lr = 1e-3;
  cfg.warmup_start_lr = 1e-6;
  const long spe = 50;

  CHECK(lr_at(0, spe, cfg) == doctest::Approx(1e-6).epsilon(1e-12));
  // warmup is strictly increasing
  for (long s = 1; s < 2 * spe; ++s)
    CHECK(lr_at(s, spe, cfg) > lr_at(s - 1, spe, cfg));
  // warmup/cosine boundary hits the target exactly
  CHECK(lr_at(2 * spe, spe, cfg) == doctest::Approx(1e-3).epsilon(1e-15));
  // cosine tail ends at zero
  CHECK(std::abs(lr_at(10 * spe, spe, cfg)) <= 1e-12);
  // continuity just around the boundary
  const double before = lr_at(2 * spe - 1, spe, cfg);
  const double at = lr_at(2 * spe, spe, cfg);
  CHECK(std::abs(at - before) < (cfg.target_lr - cfg.warmup_start_lr) / spe +
                                    1e-12);
}

TEST_CASE("adamw applies decoupled weight decay") {
  nn::Parameter p("p", Mat::Constant(2, 2, 3.0));
  std::vector<nn::Parameter*> params = {&p};

  // zero learning rate: exact no-op even with decay
  AdamW opt_zero(0.9, 0.999, 1e-8, 0.5);
  p.grad.setConstant(1.0);
  opt_zero.step(params, 0.0);
  CHECK((p.value.array() == 3.0).all());

  // zero gradient: weights shrink by exactly (1 - lr*wd); the decay never
  // enters the gradient moments
  AdamW opt(0.9, 0.999, 1e-8, 0.1);
  p.grad.setZero();
  opt.step(params, 0.01);
  CHECK(p.value(0, 0) == doctest::Approx(3.0 * (1.0 - 0.01 * 0.1))
                             .epsilon(1e-15));

  // pure adam first step moves by about lr * sign(grad)
  nn::Parameter q("q", Mat::Zero(1, 1));
  std::vector<nn::Parameter*> qp = {&q};
  AdamW opt2(0.9, 0.999, 1e-8, 0.0);
  q.grad.setConstant(2.0);
  opt2.step(qp, 0.01);
  CHECK(q.value(0, 0) == doctest::Approx(-0.01).epsilon(1e-6));
}

TEST_CASE("model selection picks the best epoch, earliest on ties") {
  std::vector<EpochMetrics> ms(3);
  ms[0].selection_metric = 0.5;
  ms[1].selection_metric = 0.7;
  ms[2].selection_metric = 0.6;
  CHECK(select_model(ms) == 1);
  ms[2].selection_metric = 0.7;
  CHECK(select_model(ms) == 1);
  ms[0].selection_metric = 0.7;
  CHECK(select_model(ms) == 0);
  CHECK(select_model({ms[0]}) == 0);
  CHECK_THROWS_AS(select_model({}), std::invalid_argument);
}

TEST_CASE("gradient check on a linear layer with cross entropy") {
  Rng rng(1);
  nn::Linear layer("fc", 4, 3, rng);
  Mat x(5, 4);
  for (Index i = 0; i < x.size(); ++i) x(i) = rng.normal();
  std::vector<int> targets = {0, 1, 2, 0, 1};

  std::vector<nn::Parameter*> params;
  layer.collect(params);
  auto loss_fn = [&]() {
    for (auto* p : params) p->zero_grad();
    nn::Tape t;
    nn::Var logits = layer(t.constant(x));
    nn::Var loss = ad::mean_all(ad::cross_entropy_rows(logits, targets));
    t.backward(loss);
    return loss.val()(0, 0);
  };
  auto report = check_gradients(params, loss_fn);
  CHECK(report.max_rel_err < 1e-6);
  CHECK(report.checked == 4 * 3 + 3);
}

TEST_CASE("gradient check on a constant loss is exactly zero") {
  nn::Parameter p("p", Mat::Ones(2, 3));
  std::vector<nn::Parameter*> params = {&p};
  auto loss_fn = [&]() {
    for (auto* q : params) q->zero_grad();
    return 1.5;  // no dependence on p
  };
  auto report = check_gradients(params, loss_fn);
  CHECK(report.max_rel_err == 0.0);
}

TEST_CASE("training is deterministic and loss decreases") {
  auto synth = generate_synthetic(tiny_synth(), 5);
  const auto& data = synth.dataset;
  std::vector<const VideoData*> train_videos, val_videos;
  for (std::size_t v = 0; v < 4; ++v) train_videos.push_back(&data.videos[v]);
  for (std::size_t v = 4; v < 6; ++v) val_videos.push_back(&data.videos[v]);

  WindowSpec spec = tiny_window();
  TrainConfig cfg = quick_config(data.schema, 3);

  Rng init1(7);
  TimModel m1(tiny_model_config(data.schema), init1);
  auto r1 = train(m1, data, train_videos, val_videos, spec, cfg);

  Rng init2(7);
  TimModel m2(tiny_model_config(data.schema), init2);
  auto r2 = train(m2, data, train_videos, val_videos, spec, cfg);

  REQUIRE(r1.epochs.size() == 3);
  CHECK(r1.best_epoch == r2.best_epoch);
  auto p1 = m1.params();
  auto p2 = m2.params();
  REQUIRE(p1.size() == p2.size());
  for (std::size_t i = 0; i < p1.size(); ++i)
    CHECK((p1[i]->value - p2[i]->value).cwiseAbs().maxCoeff() == 0.0);

  CHECK(r1.epochs.back().train_loss < r1.epochs.front().train_loss);
}

TEST_CASE("zero epochs leave the model untouched") {
  auto synth = generate_synthetic(tiny_synth(), 12);
  const auto& data = synth.dataset;
  std::vector<const VideoData*> train_videos = {&data.videos[0]};

  Rng init(13);
  TimModel model(tiny_model_config(data.schema), init);
  std::vector<Mat> before;
  for (auto* p : model.params()) before.push_back(p->value);

  TrainConfig cfg = quick_config(data.schema, 0);
  auto result = train(model, data, train_videos, {}, tiny_window(), cfg);
  CHECK(result.epochs.empty());
  CHECK(result.best_epoch == -1);
  auto params = model.params();
  for (std::size_t i = 0; i < params.size(); ++i)
    CHECK((params[i]->value - before[i]).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("an untrained model scores at chance level") {
  SynthConfig synth = tiny_synth();
  synth.videos = 40;
  synth.visual_classes = 8;
  synth.audio_classes = 8;
  synth.event_rate_hz = 0.25;
  auto gen = generate_synthetic(synth, 14);
  const auto& data = gen.dataset;
  std::vector<const VideoData*> videos;
  for (const auto& v : data.videos) videos.push_back(&v);

  Rng init(15);
  TimModel model(tiny_model_config(data.schema), init);
  auto report = evaluate_recognition(model, data, videos, tiny_window());
  const auto* vis = report.find("visual", "action");
  REQUIRE(vis != nullptr);
  CHECK(vis->count > 150);
  CHECK(vis->top1 == doctest::Approx(1.0 / 8.0).epsilon(0.5));
  CHECK(std::abs(vis->top1 - 0.125) < 0.05);
}

TEST_CASE("training aborts on a non-finite loss") {
  auto synth = generate_synthetic(tiny_synth(), 6);
  const auto& data = synth.dataset;
  std::vector<const VideoData*> train_videos = {&data.videos[0]};

  Rng init(8);
  TimModel model(tiny_model_config(data.schema), init);
  model.embed[0].w.value(0, 0) = std::nan("");
  TrainConfig cfg = quick_config(data.schema, 1);
  CHECK_THROWS_AS(train(model, data, train_videos, {}, tiny_window(), cfg),
                  std::runtime_error);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  auto synth = generate_synthetic(tiny_synth(), 9);
  Rng init(10);
  TimModel model(tiny_model_config(synth.dataset.schema), init);
  const std::string path = "test_checkpoint.timc";
  io::save_checkpoint(path, model);
  TimModel loaded = io::load_checkpoint(path);
  auto pa = model.params();
  auto pb = loaded.params();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i]->name == pb[i]->name);
    CHECK((pa[i]->value - pb[i]->value).cwiseAbs().maxCoeff() == 0.0);
  }
  CHECK(loaded.cfg.embed_dim == model.cfg.embed_dim);
  CHECK(loaded.cfg.schema.modalities == model.cfg.schema.modalities);
  std::remove(path.c_str());
}
