#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "twinnet/rng.hpp"
#include "twinnet/trainer.hpp"

using namespace twinnet;
namespace fs = std::filesystem;

namespace {

std::string temp_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("twinnet-ckpt-" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

twin::TwinModel<double> sample_model(uint64_t seed) {
  data::Vocab vocab;
  vocab.add_symbol("x");
  vocab.add_symbol("y");
  vocab.frequency = {3, 4};
  twin::ModelSpec spec;
  spec.stack.hidden = 4;
  spec.stack.embed_dim = 3;
  spec.stack.vocab_size = vocab.vocab_size();
  spec.classes = 2;
  spec.g_mode = twin::GMode::kLearned;
  return twin::build_twin_model<double>(spec, vocab, seed);
}

}  // namespace

TEST_CASE("container round trips every entry kind bitwise") {
  io::Container c;
  std::string with_nul = "hello";
  with_nul += '\0';
  with_nul += "world";
  c.put_string("s", with_nul);
  c.put_i64("i", -12345678901234ll);
  c.put_f64("d", 0.1 + 0.2);
  std::vector<float> f32{1.5f, -2.25f, 3.0f};
  std::vector<double> f64{1.0 / 3.0, -7.5};
  c.put_tensor_f32("t32", Shape{3}, f32);
  c.put_tensor_f64("t64", Shape{2}, f64);

  std::vector<uint8_t> bytes;
  c.save_bytes(bytes);
  io::Container back = io::Container::load_bytes(bytes.data(), bytes.size());
  CHECK(back.get_string("s") == with_nul);
  CHECK(back.get_i64("i") == -12345678901234ll);
  CHECK(back.get_f64("d") == 0.1 + 0.2);
  auto t32 = back.get_tensor<float>("t32");
  CHECK(std::vector<float>(t32.values->begin(), t32.values->end()) == f32);
  auto t64 = back.get_tensor<double>("t64");
  CHECK(std::vector<double>(t64.values->begin(), t64.values->end()) == f64);
  CHECK(back.tensor_width("t32") == 4);
  CHECK(back.tensor_width("t64") == 8);

  // Saving the reloaded container reproduces the same bytes.
  std::vector<uint8_t> bytes2;
  back.save_bytes(bytes2);
  CHECK(bytes == bytes2);
}

TEST_CASE("container rejects bad magic and truncation") {
  io::Container c;
  c.put_i64("x", 7);
  std::vector<uint8_t> bytes;
  c.save_bytes(bytes);

  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_WITH_AS(io::Container::load_bytes(bad.data(), bad.size()),
                       doctest::Contains("magic"), IoError);
  CHECK_THROWS_AS(io::Container::load_bytes(bytes.data(), bytes.size() - 3),
                  IoError);
  CHECK_THROWS_AS(io::Container::load("/nonexistent/path.twnc"), IoError);
}

TEST_CASE("model container io round trips bitwise") {
  auto model = sample_model(9);
  io::Container c;
  twin::model_to_container(c, model, "param.");
  auto back = twin::model_from_container<double>(c, "param.");
  auto pa = model.all_params();
  auto pb = back.all_params();
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].name == pb[i].name);
    CHECK(*pa[i].tensor->values == *pb[i].tensor->values);
  }
  CHECK(back.vocab.symbols == model.vocab.symbols);
  CHECK(back.vocab.frequency == model.vocab.frequency);
  CHECK(back.spec.serialize() == model.spec.serialize());
}

TEST_CASE("checkpoint file round trips model, best model and optimizer state") {
  std::string dir = temp_dir("snap");
  train::Snapshot<double> snap;
  snap.model = sample_model(1);
  snap.best_model = sample_model(2);
  auto params = snap.model.all_params();
  Rng rng(3);
  snap.opt.t = 17;
  for (auto& p : params) {
    std::vector<double> m(p.tensor->values->size()), v(p.tensor->values->size());
    for (auto& x : m) x = rng.uniform(-1, 1);
    for (auto& x : v) x = rng.uniform(0, 1);
    snap.opt.m.push_back(std::move(m));
    snap.opt.v.push_back(std::move(v));
  }
  snap.epoch = 4;
  snap.step = 123;
  snap.best_valid = 0.875;
  snap.best_epoch = 3;
  snap.seed = 99;
  train::save_checkpoint(dir + "/c.twnc", snap);

  CHECK(train::checkpoint_precision(dir + "/c.twnc") == "f64");
  auto back = train::load_checkpoint<double>(dir + "/c.twnc");
  CHECK(back.epoch == 4);
  CHECK(back.step == 123);
  CHECK(back.best_valid == 0.875);
  CHECK(back.best_epoch == 3);
  CHECK(back.seed == 99);
  CHECK(back.opt.t == 17);
  auto pa = snap.model.all_params();
  auto pb = back.model.all_params();
  for (size_t i = 0; i < pa.size(); ++i)
    CHECK(*pa[i].tensor->values == *pb[i].tensor->values);
  auto ba = snap.best_model.all_params();
  auto bb = back.best_model.all_params();
  for (size_t i = 0; i < ba.size(); ++i)
    CHECK(*ba[i].tensor->values == *bb[i].tensor->values);
  for (size_t i = 0; i < snap.opt.m.size(); ++i) {
    CHECK(snap.opt.m[i] == back.opt.m[i]);
    CHECK(snap.opt.v[i] == back.opt.v[i]);
  }

  // Saving again is byte-identical (bitwise round trip).
  train::save_checkpoint(dir + "/c2.twnc", back);
  std::ifstream f1(dir + "/c.twnc", std::ios::binary);
  std::ifstream f2(dir + "/c2.twnc", std::ios::binary);
  std::vector<char> b1((std::istreambuf_iterator<char>(f1)), {});
  std::vector<char> b2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(b1 == b2);
}

TEST_CASE("f32 checkpoints carry their precision tag") {
  std::string dir = temp_dir("f32");
  data::Vocab vocab;
  vocab.add_symbol("x");
  vocab.add_symbol("y");
  twin::ModelSpec spec;
  spec.stack.hidden = 3;
  spec.stack.embed_dim = 2;
  spec.stack.vocab_size = vocab.vocab_size();
  spec.classes = 2;
  train::Snapshot<float> snap;
  snap.model = twin::build_twin_model<float>(spec, vocab, 1);
  snap.best_model = twin::clone_model(snap.model);
  train::save_checkpoint(dir + "/c.twnc", snap);
  CHECK(train::checkpoint_precision(dir + "/c.twnc") == "f32");
  auto back = train::load_checkpoint<float>(dir + "/c.twnc");
  CHECK(*back.model.fwd.embedding.values == *snap.model.fwd.embedding.values);
}

TEST_CASE("corrupt checkpoint kind is rejected") {
  std::string dir = temp_dir("bad");
  io::Container c;
  c.put_string("kind", "something-else");
  c.save(dir + "/bad.twnc");
  CHECK_THROWS_AS(train::load_checkpoint<double>(dir + "/bad.twnc"), IoError);
}
