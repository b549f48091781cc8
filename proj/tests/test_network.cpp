#include "doctest_torch.hpp"

#include "common.hpp"
#include "lure/blocks.hpp"
#include "lure/error.hpp"
#include "lure/model.hpp"

using namespace lure;

namespace {

// Replaces every parameter (including zero-initialised ones) with small
// random values so identity shortcuts do not hide anything.
void randomize(torch::nn::Module& m, uint64_t seed, double scale = 0.2) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  torch::NoGradGuard guard;
  for (auto& p : m.parameters()) p.copy_(torch::randn(p.sizes(), gen, p.options()) * scale);
}

torch::Tensor text_for(LureModel& model, int64_t row, int64_t batch = 1) {
  return model->describe(std::vector<int64_t>(static_cast<size_t>(batch), row));
}

}  // namespace

TEST_CASE("fresh TGA block is the identity and preserves shape") {
  torch::manual_seed(1);
  nn::TGABlock tga(8, 6, 2);
  auto x = torch::randn({2, 8, 6, 10});
  auto t = torch::randn({2, 6});
  CHECK(torch::equal(tga->forward(x, t), x));
  auto big = torch::randn({2, 8, 12, 20});
  CHECK(tga->forward(big, t).sizes() == big.sizes());
  randomize(*tga, 2);
  CHECK_FALSE(torch::equal(tga->forward(x, t), x));
  CHECK(torch::equal(tga->forward(x, t), tga->forward(x, t)));
}

TEST_CASE("BaseBlock modality flag and zero-input identity") {
  torch::manual_seed(2);
  nn::BaseBlock block(8);
  auto x = torch::randn({1, 8, 4, 4});
  auto vi = block->forward(x, Modality::kVisible);
  CHECK(vi.sizes() == x.sizes());
  randomize(*block, 3);
  CHECK_FALSE(torch::equal(block->forward(x, Modality::kVisible), block->forward(x, Modality::kInfrared)));

  nn::BaseBlock fresh(8);
  {
    torch::NoGradGuard guard;
    fresh->modality_embedding.zero_();
  }
  auto zero = torch::zeros({1, 8, 4, 4});
  CHECK(torch::equal(fresh->forward(zero, Modality::kInfrared), zero));
}

TEST_CASE("default encoder latent shapes for a 128x128 visible input") {
  auto model = make_model(ModelConfig{}, conditioning::PromptCatalog::builtin(), 1);
  torch::NoGradGuard guard;
  auto z = model->encoder->forward(torch::rand({1, 3, 128, 128}), text_for(model, 0), Modality::kVisible);
  REQUIRE(z.size() == 4);
  const int64_t widths[] = {16, 32, 64, 128};
  const int64_t sizes[] = {128, 64, 32, 16};
  for (size_t i = 0; i < 4; ++i) {
    CHECK(z[i].size(1) == widths[i]);
    CHECK(z[i].size(2) == sizes[i]);
    CHECK(z[i].size(3) == sizes[i]);
  }
}

TEST_CASE("encoder: inner residual identity, determinism and input validation") {
  auto model = testutil::tiny_model();
  randomize(*model->encoder, 5, 0.1);
  auto x = torch::rand({2, 1, 8, 8});
  std::vector<EncoderLayerTrace> trace;
  auto z = model->encoder->forward(x, text_for(model, 12, 2), Modality::kInfrared, &trace);
  REQUIRE(trace.size() == 2);
  for (size_t i = 0; i < 2; ++i) {
    CHECK(torch::equal(z[i], trace[i].task_base - trace[i].degradation));
  }
  auto again = model->encoder->forward(x, text_for(model, 12, 2), Modality::kInfrared);
  for (size_t i = 0; i < 2; ++i) CHECK(torch::equal(z[i], again[i]));
  auto other = model->encoder->forward(x, text_for(model, 0, 2), Modality::kInfrared);
  CHECK_FALSE(torch::equal(z[1], other[1]));

  CHECK_THROWS_AS(model->encoder->forward(torch::rand({1, 3, 8, 8}), text_for(model, 0), Modality::kInfrared),
                  ShapeError);
  CHECK_THROWS_AS(model->encoder->forward(torch::rand({1, 3, 7, 8}), text_for(model, 0), Modality::kVisible),
                  ShapeError);
  CHECK_THROWS_AS(model->encoder->forward(torch::rand({1, 3, 8, 8}), torch::zeros({1, 5}), Modality::kVisible),
                  ShapeError);
}

TEST_CASE("encoding a padded image gives the shapes the config predicts") {
  auto model = testutil::tiny_model();
  auto padded = pad_to_multiple(testutil::random_image(3, 13, 9, 2), model->config().encoder.spatial_multiple());
  torch::NoGradGuard guard;
  auto z = model->encoder->forward(padded.pixels.unsqueeze(0), text_for(model, 0), Modality::kVisible);
  CHECK(z[0].size(2) == 14);
  CHECK(z[0].size(3) == 10);
  CHECK(z[1].size(2) == 7);
  CHECK(z[1].size(3) == 5);
}

TEST_CASE("encoder parameter gradients match central differences") {
  auto model = testutil::tiny_model();
  model->to(torch::kFloat64);
  randomize(*model->encoder, 7, 0.3);
  auto x = torch::rand({1, 3, 8, 8}, torch::kFloat64);
  auto text = text_for(model, 4).detach();
  auto named = model->encoder->named_parameters();
  auto objective = [&] {
    torch::Tensor s = torch::zeros({}, torch::kFloat64);
    for (const auto& level : model->encoder->forward(x, text, Modality::kVisible).levels) s = s + (level * level).sum();
    return s;
  };
  for (const char* name : {"levels.0.base_attn.0.query.weight", "levels.1.bottlenecks.0.project.weight",
                           "stem_visible.weight"}) {
    CAPTURE(name);
    auto& p = named[name];
    auto analytic = torch::autograd::grad({objective()}, {p})[0].flatten();
    auto gen = at::make_generator<at::CPUGeneratorImpl>(11);
    auto idx = torch::randint(p.numel(), {8}, gen, torch::kInt64);
    torch::NoGradGuard guard;
    double worst = 0;
    for (int64_t c = 0; c < 8; ++c) {
      const auto i = idx[c].item<int64_t>();
      const double h = 1e-6;
      const double orig = p.view(-1)[i].item<double>();
      p.view(-1)[i] = orig + h;
      const double up = objective().item<double>();
      p.view(-1)[i] = orig - h;
      const double down = objective().item<double>();
      p.view(-1)[i] = orig;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic[i].item<double>();
      worst = std::max(worst, std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6}));
    }
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("decoder shapes, finiteness and absence of an input skip path") {
  auto model = testutil::tiny_model();
  torch::NoGradGuard guard;
  LatentStack zero{{torch::zeros({1, 4, 16, 16}), torch::zeros({1, 8, 8, 8})}};
  auto out = model->decoder->forward(zero);
  CHECK(out.sizes() == torch::IntArrayRef({1, 3, 16, 16}));
  CHECK(torch::isfinite(out).all().item<bool>());
  CHECK_THROWS_AS(model->decoder->forward(LatentStack{{torch::zeros({1, 4, 16, 16})}}), ShapeError);
  CHECK_THROWS_AS(model->decoder->forward(LatentStack{{torch::zeros({1, 4, 16, 16}), torch::zeros({1, 8, 4, 4})}}),
                  ShapeError);

  for (auto& p : model->decoder->parameters()) p.zero_();
  auto a = model->decoder->forward(model->encoder->forward(torch::rand({1, 3, 16, 16}), text_for(model, 0),
                                                           Modality::kVisible));
  auto b = model->decoder->forward(model->encoder->forward(torch::rand({1, 3, 16, 16}), text_for(model, 0),
                                                           Modality::kVisible));
  CHECK(torch::equal(a, b));
}

TEST_CASE("prior rule is the elementwise sum") {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(4);
  LatentStack a{{torch::randn({1, 4, 4, 4}, gen), torch::randn({1, 8, 2, 2}, gen)}};
  LatentStack b{{torch::randn({1, 4, 4, 4}, gen), torch::randn({1, 8, 2, 2}, gen)}};
  auto s = prior_rule(a, b);
  for (size_t i = 0; i < 2; ++i) {
    auto fa = a[i].flatten(), fb = b[i].flatten(), fs = s[i].flatten();
    for (int64_t k = 0; k < fa.numel(); ++k) CHECK(fs[k].item<float>() == fa[k].item<float>() + fb[k].item<float>());
  }
  auto sym = prior_rule(b, a);
  for (size_t i = 0; i < 2; ++i) CHECK(torch::equal(s[i], sym[i]));
  auto doubled = prior_rule(a, a);
  for (size_t i = 0; i < 2; ++i) CHECK(torch::equal(doubled[i], a[i] * 2));
  LatentStack zeros{{torch::zeros({1, 4, 4, 4}), torch::zeros({1, 8, 2, 2})}};
  auto same = prior_rule(a, zeros);
  for (size_t i = 0; i < 2; ++i) CHECK(torch::equal(same[i], a[i]));
}

TEST_CASE("fusion module: zero refinement at init, decomposition after training") {
  auto model = testutil::tiny_model();
  torch::NoGradGuard guard;
  auto gen = at::make_generator<at::CPUGeneratorImpl>(5);
  LatentStack a{{torch::randn({1, 4, 8, 8}, gen), torch::randn({1, 8, 4, 4}, gen)}};
  LatentStack b{{torch::randn({1, 4, 8, 8}, gen), torch::randn({1, 8, 4, 4}, gen)}};
  auto refined = model->fusion->refine(a, b);
  for (const auto& level : refined.levels) CHECK(level.abs().max().item<double>() == 0.0);
  auto fused = model->fusion->forward(a, b);
  auto rule = prior_rule(a, b);
  for (size_t i = 0; i < 2; ++i) CHECK(torch::equal(fused[i], rule[i]));
  CHECK(torch::equal(model->decoder->forward(fused), model->decoder->forward(rule)));
  auto zero = model->fusion->forward(a.scaled(0.0), b.scaled(0.0));
  for (const auto& level : zero.levels) CHECK(level.abs().max().item<double>() == 0.0);

  randomize(*model->fusion, 9, 0.1);
  auto r = model->fusion->refine(a, b);
  auto f = model->fusion->forward(a, b);
  for (size_t i = 0; i < 2; ++i) {
    CHECK(r[i].abs().max().item<double>() > 0.0);
    CHECK(torch::allclose(f[i], r[i] + rule[i], 0, 1e-6));
  }
}
