#include <fstream>
#include <numeric>
#include <set>

#include "helpers.hpp"
#include "muvfs/augment.hpp"
#include "muvfs/sampling.hpp"
#include "muvfs/synthvid.hpp"
#include "muvfs/tensor_io.hpp"

using namespace muvfs;
using namespace muvfs::synthvid;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

DatasetSpec small_spec() {
  DatasetSpec s;
  s.appearance_classes = 2, s.motion_classes = 2, s.videos_per_class = 10, s.novel_tail = 1;
  return s;
}

Frames random_frames(std::size_t n, std::size_t c, std::size_t h, std::size_t w, Rng& rng) {
  Frames f{n, c, h, w, std::vector<double>(n * c * h * w)};
  for (auto& v : f.data) v = uniform_real(rng, 0, 1);
  return f;
}

}  // namespace

TEST_SUITE("synthvid") {
  TEST_CASE("manifest counts") {
    const auto m = make_manifest(small_spec());
    CHECK(m.videos.size() == 40);
    std::set<int> joint;
    for (const auto& e : m.videos) joint.insert(e.joint_class);
    CHECK(joint.size() == 4);
    // With a tail of one, only joint class (0, 0) is in the training split.
    CHECK(m.entries(Split::UnlabeledTrain).size() == 10);
    CHECK(m.entries(Split::NovelTest).size() == 30);
  }

  TEST_CASE("generation is byte-deterministic") {
    testutil::TempDir tmp("gen");
    auto spec = small_spec();
    spec.videos_per_class = 2;
    generate_dataset(spec, tmp.path / "a");
    generate_dataset(spec, tmp.path / "b");
    for (const auto& e : std::filesystem::directory_iterator(tmp.path / "a")) {
      CHECK(slurp(e.path()) == slurp(tmp.path / "b" / e.path().filename()));
    }
    const auto store = VideoStore::load(tmp.path / "a");
    const auto direct = VideoStore::synthesize(spec);
    for (auto id : direct.ids(Split::NovelTest)) CHECK(store.video(id).data == direct.video(id).data);
  }

  TEST_CASE("missing parent directory is an io error") {
    CHECK_THROWS_AS(generate_dataset(small_spec(), "/nonexistent_parent_dir/x"), TensorFileError);
  }

  TEST_CASE("factors separate in the matching statistics") {
    DatasetSpec spec;
    spec.videos_per_class = 6;
    const auto store = VideoStore::synthesize(spec);
    auto collect = [&](int a, int mo, auto stat) {
      std::vector<double> out;
      for (const auto& e : store.manifest().videos) {
        if (e.appearance_class == a && e.motion_class == mo) out.push_back(stat(store.video(e.video_id)));
      }
      return out;
    };
    auto variance = [](const VideoTensor& v) { return frame_stats(v, 0).variance; };
    auto energy = [](const VideoTensor& v) { return temporal_difference_energy(v); };
    auto max_of = [](const std::vector<double>& v) { return *std::max_element(v.begin(), v.end()); };
    auto min_of = [](const std::vector<double>& v) { return *std::min_element(v.begin(), v.end()); };

    // Motion fixed: appearance classes differ in pixel variance, not in temporal energy.
    const auto var_low = collect(0, 2, variance), var_high = collect(7, 2, variance);
    CHECK(max_of(var_low) < min_of(var_high));
    const auto en_low = collect(0, 2, energy), en_high = collect(7, 2, energy);
    CHECK(std::abs(min_of(en_low) - min_of(en_high)) < 0.25 * min_of(en_low));

    // Appearance fixed: a static disc and a fast one differ in temporal energy.
    const auto still = collect(3, 0, energy), moving = collect(3, 2, energy);
    CHECK(max_of(still) < min_of(moving));
  }

  TEST_CASE("invalid specs are rejected") {
    auto s = small_spec();
    s.exposure = 5.0;
    CHECK_THROWS(s.validate());
    s = small_spec();
    s.novel_tail = 2;
    CHECK_THROWS(s.validate());
  }
}

TEST_SUITE("sampling") {
  TEST_CASE("appearance segments") {
    Rng rng(1);
    const auto s8 = parse_scheme("8x1", 16, 16);
    for (int i = 0; i < 100; ++i) {
      const auto idx = appearance_indices(32, s8, rng);
      for (std::size_t k = 0; k < 8; ++k) {
        CHECK(idx[k] >= 4 * k);
        CHECK(idx[k] <= 4 * k + 3);
      }
    }
    const auto s4 = parse_scheme("4x1", 16, 16);
    std::vector<std::size_t> want = {0, 1, 2, 3};
    CHECK(appearance_indices(4, s4, rng) == want);
    // Remainder rule: the last segment absorbs leftover frames.
    CHECK(segment_begin(10, 4, 3) == 6);
    CHECK(segment_end(10, 4, 3) == 10);
    CHECK(segment_end(10, 4, 0) == 2);
  }

  TEST_CASE("action clips") {
    Rng rng(2);
    const auto s = parse_scheme("4x4", 8, 8);
    for (int i = 0; i < 100; ++i) {
      const auto idx = action_indices(32, s, rng);
      REQUIRE(idx.size() == 16);
      for (std::size_t k = 0; k < 4; ++k) {
        for (std::size_t j = 0; j < 4; ++j) {
          CHECK(idx[4 * k + j] >= 8 * k);
          CHECK(idx[4 * k + j] <= 8 * k + 7);
        }
      }
    }
    std::vector<std::size_t> all(16);
    std::iota(all.begin(), all.end(), 0);
    CHECK(action_indices(16, s, rng) == all);

    const auto strided = parse_scheme("32->16", 8, 8);
    CHECK(strided.stride() == 2);
    const auto w = action_indices(64, strided, rng);
    REQUIRE(w.size() == 16);
    for (std::size_t j = 1; j < w.size(); ++j) CHECK(w[j] - w[j - 1] == 2);
    CHECK(w.back() - w.front() == 30);
    CHECK(parse_scheme("8->4x4", 8, 8).name() == "8->4x4");
  }

  TEST_CASE("indices strictly increase and stay in segments") {
    Rng rng(3);
    for (const char* name : {"4x1", "8x1", "16x1", "4x4", "32->16", "8->4x4"}) {
      const auto s = parse_scheme(name, 8, 8);
      for (std::size_t T : {32, 48, 64}) {
        if (s.kind == SchemeKind::Clips && T / s.segments < s.window) continue;
        const auto idx = s.kind == SchemeKind::Clips ? action_indices(T, s, rng) : appearance_indices(T, s, rng);
        for (std::size_t j = 1; j < idx.size(); ++j) CHECK(idx[j] > idx[j - 1]);
        for (std::size_t j = 0; j < idx.size(); ++j) {
          const std::size_t k = j / s.clip_length;
          CHECK(idx[j] >= segment_begin(T, s.segments, k));
          CHECK(idx[j] < segment_end(T, s.segments, k));
        }
      }
    }
  }

  TEST_CASE("bad schemes") {
    CHECK_THROWS_AS(parse_scheme("banana", 8, 8), SamplingError);
    Rng rng(1);
    CHECK_THROWS_AS(action_indices(16, parse_scheme("32->16", 8, 8), rng), SamplingError);
  }
}

TEST_SUITE("augment") {
  TEST_CASE("identity config reproduces the resized input") {
    Rng rng(4);
    const Frames in = random_frames(3, 3, 8, 8, rng);
    const auto out = augment(in, AugmentationConfig::identity(), rng);
    testutil::check_close(out.frames.data, resize(in, 8, 8).data, 1e-12);
  }

  TEST_CASE("flip is an involution") {
    Rng rng(5);
    const Frames in = random_frames(2, 3, 6, 7, rng);
    CHECK(hflip(hflip(in)).data == in.data);
    AugmentParams p;
    p.flip = true;
    CHECK(apply_augment(apply_augment(in, p, 6, 7), p, 6, 7).data == in.data);
  }

  TEST_CASE("one draw per view, repeatable per seed") {
    AugmentationConfig cfg;
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
      Rng data_rng(seed);
      const Frames in = random_frames(5, 3, 16, 16, data_rng);
      Rng a(seed + 100), b(seed + 100);
      const auto ra = augment(in, cfg, a, 8, 8), rb = augment(in, cfg, b, 8, 8);
      CHECK(ra.frames.data == rb.frames.data);
      for (const auto& p : ra.per_frame) CHECK(p == ra.per_frame[0]);
    }
  }

  TEST_CASE("outputs stay in range") {
    Rng rng(6);
    AugmentationConfig cfg;
    cfg.jitter_prob = 1.0, cfg.jitter_strength = 0.9;
    for (int i = 0; i < 20; ++i) {
      const auto out = augment(random_frames(2, 3, 8, 8, rng), cfg, rng);
      for (double v : out.frames.data) CHECK((v >= 0.0 && v <= 1.0));
    }
  }
}

TEST_SUITE("tensor_io") {
  TEST_CASE("round trip is bit-exact") {
    testutil::TempDir tmp("io");
    Rng rng(7);
    const Tensor t = Tensor::randn({3, 4, 2}, 3.0, rng);
    write_tensor_file(tmp.path / "t.muvt", t);
    const Tensor back = read_tensor_file(tmp.path / "t.muvt");
    CHECK(back.shape() == t.shape());
    CHECK(back.to_vector() == t.to_vector());
  }

  TEST_CASE("f32 storage keeps values to single precision") {
    Rng rng(8);
    const Tensor t = Tensor::randn({50}, 1.0, rng);
    const auto blob = decode_tensor(encode_tensor(t.shape(), t.data(), DType::F32));
    CHECK(blob.dtype == DType::F32);
    for (std::size_t i = 0; i < 50; ++i) CHECK(blob.values[i] == static_cast<double>(static_cast<float>(t.data()[i])));
  }

  TEST_CASE("corrupt inputs name the problem") {
    const Tensor t = Tensor::ones({4});
    auto bytes = encode_tensor(t.shape(), t.data(), DType::F64);
    auto expect_kind = [](std::vector<std::uint8_t> b, TensorFileErrorKind kind) {
      try {
        decode_tensor(b);
        FAIL("decode accepted corrupt bytes");
      } catch (const TensorFileError& e) {
        CHECK(e.kind() == kind);
      }
    };
    expect_kind({bytes.begin(), bytes.end() - 3}, TensorFileErrorKind::TruncatedPayload);
    expect_kind({bytes.begin(), bytes.begin() + 5}, TensorFileErrorKind::TruncatedHeader);
    auto bad = bytes;
    bad[0] = 'X';
    expect_kind(bad, TensorFileErrorKind::BadMagic);
    bad = bytes;
    bad[6] = 7;
    expect_kind(bad, TensorFileErrorKind::BadDType);
    std::vector<double> nan = {std::nan("")};
    CHECK_THROWS_AS(encode_tensor({1}, nan, DType::F64), TensorFileError);
    try {
      decode_tensor(std::vector<std::uint8_t>(bytes.begin(), bytes.end() - 3));
    } catch (const TensorFileError& e) {
      CHECK(std::string(e.what()).find("truncated payload") != std::string::npos);
    }
  }
}
