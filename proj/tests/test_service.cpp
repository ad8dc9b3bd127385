#include <doctest.h>

#include <chrono>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "support.hpp"
#include "zsd/image_io.hpp"
#include "zsd/metrics.hpp"
#include "zsd/serialization.hpp"
#include "zsd/service.hpp"
#include "zsd/synthetic.hpp"

using namespace zsd;
using namespace std::chrono_literals;
using nlohmann::json;
using zsd::test::TempDir;

namespace {

std::string png_of(const Image& img) {
  const auto bytes = encode_png(img, 16);
  return {bytes.begin(), bytes.end()};
}

/// A service on an ephemeral port plus a client pointed at it.
struct Fixture {
  explicit Fixture(const std::filesystem::path& workdir, int workers = 1, std::size_t max_upload = 64u << 20)
      : svc(make_config(workdir, workers, max_upload)), port(svc.listen_in_background("127.0.0.1")),
        client("127.0.0.1", port) {
    client.set_read_timeout(600, 0);
  }

  static service::ServiceConfig make_config(const std::filesystem::path& workdir, int workers, std::size_t max_upload) {
    service::ServiceConfig c;
    c.workdir = workdir;
    c.workers = workers;
    c.max_upload_bytes = max_upload;
    return c;
  }

  httplib::Result upload(const std::string& png, const std::string& config = "") {
    httplib::MultipartFormDataItems items{{"image", png, "image.png", "image/png"}};
    if (!config.empty()) items.push_back({"config", config, "", "application/json"});
    return client.Post("/sessions", items);
  }

  std::string create(const Image& img, const std::string& config) {
    auto r = upload(png_of(img), config);
    REQUIRE(r);
    REQUIRE(r->status == 202);
    return json::parse(r->body)["id"];
  }

  json get_json(const std::string& path, int expect = 200) {
    auto r = client.Get(path);
    REQUIRE(r);
    CAPTURE(path);
    CAPTURE(r->body);
    CHECK(r->status == expect);
    return json::parse(r->body);
  }

  std::string result(const std::string& id, const std::string& variant = "denoised") {
    auto r = client.Get("/sessions/" + id + "/result?variant=" + variant);
    REQUIRE(r);
    REQUIRE(r->status == 200);
    return r->body;
  }

  int patch(const std::string& id, const std::string& body) {
    auto r = client.Patch("/sessions/" + id + "/sigma", body, "application/json");
    REQUIRE(r);
    return r->status;
  }

  void wait_ready(const std::string& id) {
    REQUIRE(svc.wait_until_settled(id, 600s));
    REQUIRE(get_json("/sessions/" + id)["state"] == "ready");
  }

  service::Service svc;
  int port;
  httplib::Client client;
};

Image noisy_phantom(int size, std::uint64_t seed) { return add_correlated_gaussian_noise(shepp_logan(size), 0.05, 1, seed); }

}  // namespace

TEST_SUITE("helpers") {
  TEST_CASE("roi parsing") {
    CHECK(service::parse_roi("1,2,3,4") == RoiRect{1, 2, 3, 4});
    CHECK(service::parse_roi(" 0, 0 ,8,8") == RoiRect{0, 0, 8, 8});
    CHECK_THROWS(service::parse_roi("1,2,3"));
    CHECK_THROWS(service::parse_roi("1,2,3,4,5"));
    CHECK_THROWS(service::parse_roi("a,b,c,d"));
  }

  TEST_CASE("config overrides") {
    TrainConfig t;
    LossConfig l;
    ModelConfig m;
    service::apply_overrides(json::parse(R"({"epochs":7,"lambda":200,"stages":1,"els_mode":"none","s1":2,"s2":3,
                                             "sigma_upper_bounds":{"r":0.5}})"),
                             t, l, m);
    CHECK(t.epochs == 7);
    CHECK(l.lambda == 200.0);
    CHECK(m.stages == 1);
    CHECK(t.els_mode == ElsMode::none);
    CHECK(m.sigma_upper_bounds.r == 0.5);
    CHECK_THROWS_AS(service::apply_overrides(json::parse(R"({"epoch":7})"), t, l, m), std::invalid_argument);
    CHECK_THROWS_AS(service::apply_overrides(json::parse(R"({"stages":4})"), t, l, m), std::invalid_argument);
    CHECK_THROWS_AS(service::apply_overrides(json::parse(R"({"epochs":"many"})"), t, l, m), std::invalid_argument);
    CHECK_THROWS_AS(service::apply_overrides(json::array(), t, l, m), std::invalid_argument);
  }

  TEST_CASE("state names") {
    for (auto s : {service::SessionState::created, service::SessionState::training, service::SessionState::ready,
                   service::SessionState::failed}) {
      CHECK(service::parse_session_state(service::to_string(s)) == s);
    }
    CHECK_THROWS(service::parse_session_state("done"));
  }
}

TEST_SUITE("http") {
  TEST_CASE("health and cors") {
    TempDir dir("svc-health");
    Fixture f(dir.path());
    auto r = f.client.Get("/healthz");
    REQUIRE(r);
    CHECK(r->status == 200);
    CHECK(json::parse(r->body)["status"] == "ok");
    CHECK(r->get_header_value("Access-Control-Allow-Origin") == "*");
    auto pre = f.client.Options("/sessions");
    REQUIRE(pre);
    CHECK(pre->status == 204);
    CHECK(pre->get_header_value("Access-Control-Allow-Methods").find("PATCH") != std::string::npos);
  }

  TEST_CASE("upload validation") {
    TempDir dir("svc-upload");
    Fixture f(dir.path(), 1, 4096);
    auto bad = f.upload("definitely not a png");
    REQUIRE(bad);
    CHECK(bad->status == 400);
    CHECK(json::parse(bad->body).contains("error"));

    auto big = f.upload(png_of(test::random_image(128, 128, 1)));
    REQUIRE(big);
    CHECK(big->status == 413);

    auto cfg = f.upload(png_of(Image(16, 16, 0.5)), R"({"no_such_key":1})");
    REQUIRE(cfg);
    CHECK(cfg->status == 400);
    auto badjson = f.upload(png_of(Image(16, 16, 0.5)), "{");
    REQUIRE(badjson);
    CHECK(badjson->status == 400);

    auto no_part = f.client.Post("/sessions", "{}", "application/json");
    REQUIRE(no_part);
    CHECK(no_part->status == 400);
    CHECK(f.get_json("/sessions")["sessions"].empty());
  }

  TEST_CASE("unknown ids are 404 everywhere") {
    TempDir dir("svc-404");
    Fixture f(dir.path());
    f.get_json("/sessions/abc123", 404);
    f.get_json("/sessions/abc123/result", 404);
    f.get_json("/sessions/abc123/sigma/0", 404);
    f.get_json("/sessions/abc123/metrics?roiSignal=0,0,4,4&roiBg=4,4,8,8", 404);
    CHECK(f.patch("abc123", "[]") == 404);
    auto r = f.client.Post("/sessions/abc123/refilter");
    REQUIRE(r);
    CHECK(r->status == 404);
  }

  TEST_CASE("lifecycle: queue, progress, completion, overrides") {
    TempDir dir("svc-life");
    Fixture f(dir.path(), 1);
    // The single worker is busy with the first session, so the second waits at 0/500.
    const std::string busy = f.create(noisy_phantom(64, 1), "");
    const std::string queued = f.create(noisy_phantom(32, 2), R"({"stages":1,"seed":5})");
    CHECK(busy != queued);
    const json fresh = f.get_json("/sessions/" + queued);
    CHECK(fresh["state"] == "training");
    CHECK(fresh["progress"]["epoch"] == 0);
    CHECK(fresh["progress"]["epochs"] == 500);
    CHECK(fresh["queued"] == true);
    CHECK(fresh["width"] == 32);

    f.get_json("/sessions/" + queued + "/result", 409);
    f.get_json("/sessions/" + queued + "/sigma/0", 409);
    CHECK(f.patch(queued, "[]") == 409);
    f.get_json("/sessions/" + queued + "/metrics?roiSignal=0,0,4,4&roiBg=4,4,8,8", 409);
    auto rf = f.client.Post("/sessions/" + queued + "/refilter");
    REQUIRE(rf);
    CHECK(rf->status == 409);

    // Progress is monotone while the first session trains; polling does not block.
    int last = -1;
    for (int i = 0; i < 20; ++i) {
      const auto t0 = std::chrono::steady_clock::now();
      const int epoch = f.get_json("/sessions/" + busy)["progress"]["epoch"];
      CHECK(std::chrono::steady_clock::now() - t0 < 1s);
      CHECK(epoch >= last);
      last = epoch;
      std::this_thread::sleep_for(50ms);
    }

    f.wait_ready(busy);
    f.wait_ready(queued);
    const json done = f.get_json("/sessions/" + queued);
    CHECK(done["progress"]["epoch"] == 500);
    CHECK(done["loss_tail"].size() == 10);
    CHECK(done["queued"] == false);
    CHECK(done["stages"] == 1);
    const DenoiserModel ckpt = load_checkpoint(dir / "sessions" / queued / "checkpoint.json");
    CHECK(ckpt.stages.size() == 1);
    CHECK(std::filesystem::exists(dir / "sessions" / queued / "input.png"));
    CHECK(std::filesystem::exists(dir / "sessions" / queued / "report.json"));
    CHECK(f.get_json("/sessions")["sessions"].size() == 2);
  }

  TEST_CASE("results, sigma maps, edits and refilter") {
    TempDir dir("svc-edit");
    Fixture f(dir.path());
    // 40x24 is padded to 48x32, so region coordinates must be shifted by the pad.
    const Image input = test::random_image(40, 24, 3, 0.2, 0.8);
    const std::string id = f.create(input, R"({"epochs":4})");
    f.wait_ready(id);

    auto res = f.client.Get("/sessions/" + id + "/result");
    REQUIRE(res);
    CHECK(res->status == 200);
    CHECK(res->get_header_value("Content-Type") == "image/png");
    CHECK(res->get_header_value("X-Width") == "40");
    CHECK(res->get_header_value("X-Edit-Count") == "0");
    const Image denoised = decode_png(std::vector<std::uint8_t>(res->body.begin(), res->body.end()));
    CHECK(denoised.width() == 40);
    CHECK(denoised.height() == 24);
    CHECK(f.result(id, "refiltered") == res->body);
    f.get_json("/sessions/" + id + "/result?variant=sharpened", 400);

    const json s0 = f.get_json("/sessions/" + id + "/sigma/0");
    CHECK(s0["grid"] == json::array({4, 6}));
    CHECK(s0["pad"]["left"] == 4);
    CHECK(s0["pad"]["top"] == 4);
    for (const char* ch : {"sigma_r", "sigma_x", "sigma_y"}) {
      for (double v : s0[ch]) CHECK(v > 0.0);
      CHECK(s0["edited"][ch] == s0[ch]);
    }
    f.get_json("/sessions/" + id + "/sigma/1");
    f.get_json("/sessions/" + id + "/sigma/5", 404);

    // Invalid edits are rejected atomically.
    CHECK(f.patch(id, "not json") == 400);
    CHECK(f.patch(id, R"([{"region":{"x0":0,"y0":0,"x1":8,"y1":8},"multiplier_r":0}])") == 422);
    CHECK(f.patch(id, R"([{"region":{"x0":0,"y0":0,"x1":8,"y1":8}},{"region":{"x0":0,"y0":0,"x1":80,"y1":8}}])") ==
          422);
    CHECK(f.patch(id, R"([{"stage":3,"region":{"x0":0,"y0":0,"x1":8,"y1":8}}])") == 422);
    CHECK(f.patch(id, R"({"region":{"x0":0,"y0":0,"x1":8,"y1":8}})") == 422);
    CHECK(f.get_json("/sessions/" + id)["edit_count"] == 0);

    // Multiplier-1 edits change nothing.
    CHECK(f.patch(id, R"([{"region":{"x0":0,"y0":0,"x1":40,"y1":24}}])") == 200);
    CHECK(f.result(id, "refiltered") == res->body);
    CHECK(f.patch(id, R"({"reset":true})") == 200);

    // Image pixels [12,20)x[4,12) sit on the padded patch (2, 1) of the last stage.
    auto r = f.client.Patch("/sessions/" + id + "/sigma",
                            R"([{"stage":1,"region":{"x0":12,"y0":4,"x1":20,"y1":12},"multiplier_r":2}])",
                            "application/json");
    REQUIRE(r);
    CHECK(r->status == 200);
    CHECK(json::parse(r->body)["applied_edit_count"] == 1);
    const json s1 = f.get_json("/sessions/" + id + "/sigma/1");
    for (int k = 0; k < 24; ++k) {
      const double base = s1["sigma_r"][k], edited = s1["edited"]["sigma_r"][k];
      CHECK(edited == (k == 1 * 6 + 2 ? 2 * base : base));
    }
    auto rf = f.client.Post("/sessions/" + id + "/refilter");
    REQUIRE(rf);
    CHECK(rf->status == 200);
    CHECK(json::parse(rf->body)["status"] == "ok");
    const std::string edited_png = f.result(id, "refiltered");
    const Image edited = decode_png(std::vector<std::uint8_t>(edited_png.begin(), edited_png.end()));
    int changed = 0;
    for (int y = 0; y < 24; ++y) {
      for (int x = 0; x < 40; ++x) {
        const bool inside = x >= 12 && x < 20 && y >= 4 && y < 12;
        if (!inside) CHECK(edited.at(x, y) == denoised.at(x, y));
        changed += edited.at(x, y) != denoised.at(x, y);
      }
    }
    CHECK(changed > 0);
    CHECK(f.result(id) == res->body);  // the denoised variant never changes

    auto again = f.client.Post("/sessions/" + id + "/refilter");
    REQUIRE(again);
    CHECK(f.result(id, "refiltered") == edited_png);

    // Undo drops the last edit; reset clears everything.
    CHECK(f.patch(id, R"([{"stage":0,"region":{"x0":0,"y0":0,"x1":8,"y1":8},"multiplier_x":0.5}])") == 200);
    CHECK(f.get_json("/sessions/" + id)["edit_count"] == 2);
    CHECK(f.patch(id, R"({"undo":true})") == 200);
    CHECK(f.get_json("/sessions/" + id)["edit_count"] == 1);
    CHECK(f.result(id, "refiltered") == edited_png);
    CHECK(f.patch(id, R"({"reset":true})") == 200);
    f.client.Post("/sessions/" + id + "/refilter");
    CHECK(f.result(id, "refiltered") == res->body);
  }

  TEST_CASE("concurrent patches are all applied") {
    TempDir dir("svc-conc");
    Fixture f(dir.path());
    const std::string id = f.create(test::random_image(32, 32, 4), R"({"epochs":2})");
    f.wait_ready(id);
    std::vector<std::thread> threads;
    for (int i = 0; i < 8; ++i) {
      threads.emplace_back([&f, &id] {
        httplib::Client c("127.0.0.1", f.port);
        c.Patch("/sessions/" + id + "/sigma", R"([{"region":{"x0":0,"y0":0,"x1":8,"y1":8},"multiplier_r":1.5}])",
                "application/json");
      });
    }
    for (auto& t : threads) t.join();
    CHECK(f.get_json("/sessions/" + id)["edit_count"] == 8);
    const json s = f.get_json("/sessions/" + id + "/sigma/0");
    CHECK(s["edited"]["sigma_r"][0].get<double>() ==
          doctest::Approx(s["sigma_r"][0].get<double>() * std::pow(1.5, 8)).epsilon(1e-12));
  }

  TEST_CASE("metrics endpoint") {
    TempDir dir("svc-metrics");
    Fixture f(dir.path());
    Image flat_bg = test::random_image(32, 32, 5);
    for (int y = 16; y < 32; ++y) {
      for (int x = 0; x < 16; ++x) flat_bg.at(x, y) = 0.5;
    }
    const std::string id = f.create(flat_bg, R"({"epochs":2})");
    f.wait_ready(id);
    const json same = f.get_json("/sessions/" + id + "/metrics?roiSignal=16,0,32,16&roiBg=16,0,32,16");
    CHECK(same["cnr_input"] == 0.0);
    CHECK(same["cnr_denoised"] == 0.0);
    CHECK(same["cnr_refiltered"] == 0.0);
    f.get_json("/sessions/" + id + "/metrics?roiSignal=0,0,8,8&roiBg=0,16,16,32", 422);
    f.get_json("/sessions/" + id + "/metrics?roiSignal=0,0,8,8&roiBg=0,0,99,8", 422);
    f.get_json("/sessions/" + id + "/metrics?roiSignal=0,0,8&roiBg=0,0,4,4", 422);
    f.get_json("/sessions/" + id + "/metrics?roiSignal=0,0,8,8", 422);
  }

  TEST_CASE("denoised CNR is at least the input CNR on a noisy phantom") {
    TempDir dir("svc-cnr");
    Fixture f(dir.path());
    const std::string id = f.create(add_correlated_gaussian_noise(shepp_logan(128), 0.08, 2, 1), "");
    f.wait_ready(id);
    // Signal inside the bright lower-left ellipse, background in the brain matter beside it.
    const json m = f.get_json("/sessions/" + id + "/metrics?roiSignal=38,60,48,72&roiBg=56,76,72,92");
    CAPTURE(m.dump());
    CHECK(m["cnr_denoised"].get<double>() >= m["cnr_input"].get<double>());
  }

  TEST_CASE("refilter of a 256x256 session is interactive") {
    TempDir dir("svc-fast");
    Fixture f(dir.path());
    const std::string id = f.create(noisy_phantom(256, 6), R"({"epochs":1})");
    f.wait_ready(id);
    CHECK(f.patch(id, R"([{"stage":1,"region":{"x0":120,"y0":120,"x1":128,"y1":128},"multiplier_r":2}])") == 200);
    const auto t0 = std::chrono::steady_clock::now();
    auto r = f.client.Post("/sessions/" + id + "/refilter");
    f.result(id, "refiltered");
    CHECK(std::chrono::steady_clock::now() - t0 < 2s);
    REQUIRE(r);
    CHECK(r->status == 200);
  }
}

TEST_SUITE("persistence") {
  TEST_CASE("restart restores ready sessions bit-exactly, including edits") {
    TempDir dir("svc-restart");
    std::string id, denoised, refiltered;
    json maps;
    {
      Fixture f(dir.path());
      id = f.create(test::random_image(40, 40, 7), R"({"epochs":3})");
      f.wait_ready(id);
      CHECK(f.patch(id, R"([{"region":{"x0":0,"y0":0,"x1":16,"y1":16},"multiplier_r":3}])") == 200);
      denoised = f.result(id);
      refiltered = f.result(id, "refiltered");
      maps = f.get_json("/sessions/" + id + "/sigma/1");
    }
    Fixture f(dir.path());
    const json s = f.get_json("/sessions/" + id);
    CHECK(s["state"] == "ready");
    CHECK(s["edit_count"] == 1);
    CHECK(f.result(id) == denoised);
    CHECK(f.result(id, "refiltered") == refiltered);
    CHECK(f.get_json("/sessions/" + id + "/sigma/1") == maps);
  }

  TEST_CASE("a session interrupted mid-training is retrained after restart") {
    TempDir dir("svc-interrupt");
    std::string id;
    {
      Fixture f(dir.path());
      id = f.create(noisy_phantom(128, 3), R"({"epochs":500})");
      std::this_thread::sleep_for(300ms);
    }
    Fixture f(dir.path());
    CHECK(f.get_json("/sessions/" + id)["state"] == "training");
    f.wait_ready(id);
    CHECK(f.get_json("/sessions/" + id)["progress"]["epoch"] == 500);
  }
}
