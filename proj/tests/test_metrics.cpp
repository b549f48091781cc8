#include "doctest_torch.hpp"

#include <sstream>

#include "common.hpp"
#include "lure/error.hpp"
#include "lure/metrics.hpp"
#include "metric_suite.hpp"

using namespace lure;
namespace m = lure::metrics;

TEST_CASE("metric identities and loop oracles") {
  for (const auto& c : metric_suite::run()) {
    CAPTURE(c.name);
    CAPTURE(c.got);
    CAPTURE(c.want);
    CHECK(c.ok());
  }
}

TEST_CASE("gaussian window is normalised and symmetric") {
  auto w = m::gaussian_window(11);
  double s = 0;
  for (double v : w) s += v;
  CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  for (size_t i = 0; i < 5; ++i) CHECK(w[i] == doctest::Approx(w[10 - i]).epsilon(1e-15));
  CHECK(w[5] > w[4]);
}

TEST_CASE("pearson of a constant plane is zero and MS-SSIM needs 16 pixels") {
  m::Plane flat(8, 8, 0.3);
  auto r = metric_suite::random_plane(8, 8, 1);
  CHECK(m::pearson(flat, r) == 0.0);
  CHECK_THROWS_AS(m::ms_ssim(r, r), ShapeError);
}

TEST_CASE("luma plane of RGB and gray images") {
  auto rgb = torch::zeros({3, 2, 2});
  rgb[0].fill_(1.0);
  auto p = m::luma_plane(ImageArray(rgb));
  CHECK(p.at(1, 1) == doctest::Approx(0.299).epsilon(1e-6));
  auto g = m::luma_plane(ImageArray(torch::full({1, 2, 2}, 0.25)));
  CHECK(g.at(0, 1) == 0.25);
}

TEST_CASE("directory evaluation and CSV layout") {
  auto data = testutil::tiny_corpus("eval_dir", 2, 3, 32);
  auto fused = testutil::scratch("eval_fused");
  for (const auto& f : list_pngs(data / "vi/pairs")) std::filesystem::copy_file(f, fused / f.filename());
  save_png(fused / "orphan.png", ImageArray(testutil::random_image(3, 32, 32, 1)));
  std::vector<std::string> skipped;
  auto rows = m::evaluate_directory(fused, data / "ir/pairs", data / "vi/pairs", &skipped);
  REQUIRE(rows.size() == 3);
  CHECK(skipped == std::vector<std::string>{"orphan"});
  CHECK(rows[0].stem < rows[1].stem);
  CHECK(rows[0].scores.psnr > 50.0);  // fused == vi for one of the two references

  std::ostringstream os;
  m::write_csv(os, rows);
  const auto text = os.str();
  CHECK(text.find("stem,EN,AG,SD,SF,CC,SCD,PSNR,SSIM,MS_SSIM\n") != std::string::npos);
  CHECK(text.find("\nmean,") != std::string::npos);

  std::ostringstream empty;
  m::write_csv(empty, {});
  CHECK(empty.str().find("\nmean,") == std::string::npos);
  CHECK(empty.str().find("stem,EN") != std::string::npos);
  auto mean = m::mean_scores({});
  CHECK(mean.en == 0.0);
}
