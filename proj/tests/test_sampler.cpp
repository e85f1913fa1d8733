#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <numeric>

#include "bdcca/sampler.hpp"
#include "oracles.hpp"

using namespace bdcca;

namespace {

FrameTrack binary_track(std::vector<double> v, const std::string& id = "") {
  FrameTrack t;
  t.kind = FrameTrack::Kind::BinaryLabel;
  t.values = std::move(v);
  t.clip_id = id;
  return t;
}

Spectrogram make_spec(int f, int t, std::uint64_t seed, const std::string& id) {
  Rng rng(seed);
  Spectrogram s;
  s.values.resize(f, t);
  for (int i = 0; i < f; ++i)
    for (int j = 0; j < t; ++j) s.values(i, j) = rng.uniform(0.0, 1.0);
  s.frame_hop = 0.02;
  s.clip_id = id;
  return s;
}

// Exact rational route for Eq.-style binning: smallest n with n*M >= m*B.
int bin_oracle(std::int64_t m, std::int64_t big_m, int bins) {
  if (m == 0) return 1;
  int n = 0;
  while (static_cast<std::int64_t>(n) * big_m < m * bins) ++n;
  return n;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(),
              [&](std::size_t x, std::size_t y) { return v[x] < v[y]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size(); ++i)
      r[idx[i]] = static_cast<double>(i);
    return r;
  };
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double mean = (n - 1.0) / 2.0;
  double num = 0.0, da = 0.0, db = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (ra[i] - mean) * (rb[i] - mean);
    da += (ra[i] - mean) * (ra[i] - mean);
    db += (rb[i] - mean) * (rb[i] - mean);
  }
  return num / std::sqrt(da * db);
}

}  // namespace

TEST_CASE("count_positives sums binary tracks", "[sampler]") {
  REQUIRE(count_positives(binary_track(std::vector<double>(375, 0.0))) == 0);
  REQUIRE(count_positives(binary_track(std::vector<double>(375, 1.0))) == 375);
  REQUIRE(count_positives(binary_track({1, 0, 1, 1, 0})) == 3);

  FrameTrack probs;
  probs.kind = FrameTrack::Kind::Probability;
  probs.values = {0.3, 0.9};
  REQUIRE_THROWS_AS(count_positives(probs), validation_error);
}

TEST_CASE("assign_bin evaluates the ceiling rule", "[sampler]") {
  REQUIRE(assign_bin(25, 100, 10) == 3);   // ceil(2.5)
  REQUIRE(assign_bin(100, 100, 10) == 10); // m = M
  REQUIRE(assign_bin(100, 100, 7) == 7);
  REQUIRE(assign_bin(1, 100, 10) == 1);    // ceil(0.1)
  REQUIRE(assign_bin(0, 100, 10) == 1);    // m = 0 folds into bin 1
  REQUIRE_THROWS_AS(assign_bin(101, 100, 10), validation_error);
  REQUIRE_THROWS_AS(assign_bin(-1, 100, 10), validation_error);
  REQUIRE_THROWS_AS(assign_bin(5, 0, 10), config_error);
}

TEST_CASE("assign_bin matches the rational oracle and stays monotone",
          "[sampler]") {
  for (std::int64_t big_m : {1, 7, 100, 375}) {
    for (int bins : {1, 2, 10, 37}) {
      int prev = 1;
      for (std::int64_t m = 0; m <= big_m; ++m) {
        const int n = assign_bin(m, big_m, bins);
        REQUIRE(n == bin_oracle(m, big_m, bins));
        REQUIRE(n >= 1);
        REQUIRE(n <= bins);
        REQUIRE(n >= prev);
        prev = n;
      }
    }
  }
}

TEST_CASE("build_index counts, finds M, and assigns bins", "[sampler]") {
  std::vector<Spectrogram> specs;
  for (int i = 0; i < 3; ++i)
    specs.push_back(make_spec(4, 120, 10 + static_cast<std::uint64_t>(i), cat("u", i)));
  std::vector<const Spectrogram*> ptrs = {&specs[0], &specs[1], &specs[2]};

  // Predicted positive counts per clip: 0, 10, 100.
  auto predictor = [](const Spectrogram& s) {
    FrameTrack t;
    t.kind = FrameTrack::Kind::Probability;
    t.clip_id = s.clip_id;
    const int m = s.clip_id == "u0" ? 0 : s.clip_id == "u1" ? 10 : 100;
    for (int j = 0; j < s.frames(); ++j)
      t.values.push_back(j < m ? 0.9 : 0.1);
    return t;
  };

  BinningConfig cfg;
  cfg.bins = 10;
  DetectionConfig det;  // threshold 0.6
  auto index = build_index(ptrs, predictor, det, cfg);
  REQUIRE(index.max_positive_frames == 100);
  REQUIRE(index.records.size() == 3);
  REQUIRE(index.records[0].bin == 1);
  REQUIRE(index.records[1].bin == 1);
  REQUIRE(index.records[2].bin == 10);

  auto again = build_index(ptrs, predictor, det, cfg);
  for (std::size_t i = 0; i < 3; ++i) {
    REQUIRE(again.records[i].positive_frames == index.records[i].positive_frames);
    REQUIRE(again.records[i].bin == index.records[i].bin);
  }
}

TEST_CASE("build_index rejects empty sets and all-silent predictions",
          "[sampler]") {
  BinningConfig cfg;
  DetectionConfig det;
  auto silent = [](const Spectrogram& s) {
    FrameTrack t;
    t.kind = FrameTrack::Kind::Probability;
    t.values.assign(static_cast<std::size_t>(s.frames()), 0.1);
    return t;
  };
  REQUIRE_THROWS_AS(build_index({}, silent, det, cfg), validation_error);

  auto spec = make_spec(4, 50, 1, "u0");
  std::vector<const Spectrogram*> ptrs = {&spec};
  REQUIRE_THROWS_WITH(build_index(ptrs, silent, det, cfg),
                      Catch::Matchers::ContainsSubstring("threshold"));
}

TEST_CASE("bootstrapped index ranks clips by planted event density",
          "[sampler]") {
  // Labeled toy set: events are band bursts; train a small bootstrap, then
  // index unlabeled clips with known planted densities.
  const int height = 8, t = 40;
  Rng rng(77);
  auto make_clip = [&](double density, std::uint64_t seed, const std::string& id,
                       FrameTrack* labels) {
    Rng local(seed);
    Spectrogram s;
    s.values.resize(height, t);
    FrameTrack track = binary_track(std::vector<double>(t, 0.0), id);
    for (int j = 0; j < t; ++j) {
      for (int i = 0; i < height; ++i)
        s.values(i, j) = std::abs(0.1 * local.gaussian());
      if (local.uniform() < density) {
        track.values[static_cast<std::size_t>(j)] = 1.0;
        for (int i = 2; i < 5; ++i) s.values(i, j) += 3.0;
      }
    }
    s.clip_id = id;
    s.frame_hop = 0.02;
    if (labels) *labels = track;
    return s;
  };

  std::vector<LabeledFeatures> labeled;
  for (int i = 0; i < 12; ++i) {
    LabeledFeatures item;
    FrameTrack lab;
    auto s = make_clip(0.3, 100 + static_cast<std::uint64_t>(i), cat("l", i), &lab);
    item.features = s.values;
    item.labels = lab;
    item.clip_id = s.clip_id;
    labeled.push_back(std::move(item));
  }

  ClassifierConfig arch;
  arch.input_height = height;
  arch.conv_channels = {4, 8};
  arch.freq_pool = 2;
  arch.gru_hidden = 8;
  arch.log_front_end = false;
  Classifier bootstrap(arch, Rng(5));
  ClassifierTrainConfig tcfg;
  tcfg.learning_rate = 0.05;
  tcfg.momentum = 0.9;
  tcfg.epochs = 60;
  tcfg.batch_size = 12;
  tcfg.seed = 6;
  tcfg.min_positive_fraction = 0.0;
  train_classifier(bootstrap, labeled, tcfg);

  std::vector<Spectrogram> unlabeled;
  std::vector<double> densities;
  for (int i = 0; i < 20; ++i) {
    const double density = 0.05 + 0.045 * i;  // 5% .. 90%
    unlabeled.push_back(
        make_clip(density, 500 + static_cast<std::uint64_t>(i), cat("u", i), nullptr));
    densities.push_back(density);
  }
  std::vector<const Spectrogram*> ptrs;
  for (auto& s : unlabeled) ptrs.push_back(&s);

  BinningConfig cfg;
  cfg.bins = 5;
  DetectionConfig det;
  auto index = build_index(ptrs, bootstrap, det, cfg);
  std::vector<double> counts;
  for (const auto& r : index.records)
    counts.push_back(static_cast<double>(r.positive_frames));
  REQUIRE(spearman(densities, counts) >= 0.8);
}

TEST_CASE("balanced batches hit every bin uniformly", "[sampler]") {
  // Four bins, equally populated.
  const int bins = 4, per_bin = 6, t = 20;
  std::vector<Spectrogram> mic, accel;
  OccupancyIndex index;
  index.bins = bins;
  index.max_positive_frames = 100;
  int id = 0;
  for (int b = 1; b <= bins; ++b) {
    for (int i = 0; i < per_bin; ++i) {
      const std::string cid = cat("c", id);
      mic.push_back(make_spec(4, t, 1000 + static_cast<std::uint64_t>(id), cid));
      accel.push_back(make_spec(4, t, 2000 + static_cast<std::uint64_t>(id), cid));
      index.records.push_back({cid, 25 * b, b});
      ++id;
    }
  }
  std::vector<const Spectrogram*> mic_ptrs, accel_ptrs;
  for (auto& s : mic) mic_ptrs.push_back(&s);
  for (auto& s : accel) accel_ptrs.push_back(&s);

  BinningConfig cfg;
  cfg.bins = bins;
  cfg.batch_size = 10;
  cfg.min_bin_population = 1;
  BatchSampler sampler(index, mic_ptrs, accel_ptrs, cfg, 42);

  const int draws = 10000;
  std::vector<int> counts(static_cast<std::size_t>(bins), 0);
  for (int i = 0; i < draws / cfg.batch_size; ++i) {
    auto batch = sampler.next();
    for (const auto& item : batch.items) {
      ++counts[static_cast<std::size_t>(item.bin - 1)];
      REQUIRE(item.mic->clip_id == item.accel->clip_id);  // synchronization
    }
  }
  const double p = 1.0 / bins;
  const double sigma = std::sqrt(p * (1.0 - p) / draws);
  for (int b = 0; b < bins; ++b) {
    const double freq = static_cast<double>(counts[static_cast<std::size_t>(b)]) / draws;
    REQUIRE(std::abs(freq - p) < 3.0 * sigma);
  }
}

TEST_CASE("single-bin sampling equals plain uniform draws", "[sampler]") {
  const int n = 7, t = 15;
  std::vector<Spectrogram> mic, accel;
  OccupancyIndex index = [] {
    OccupancyIndex idx;
    idx.bins = 1;
    idx.max_positive_frames = 1;
    return idx;
  }();
  for (int i = 0; i < n; ++i) {
    const std::string cid = cat("c", i);
    mic.push_back(make_spec(3, t, 100 + static_cast<std::uint64_t>(i), cid));
    accel.push_back(make_spec(3, t, 200 + static_cast<std::uint64_t>(i), cid));
    index.records.push_back({cid, 0, 1});
  }
  std::vector<const Spectrogram*> mic_ptrs, accel_ptrs;
  for (auto& s : mic) mic_ptrs.push_back(&s);
  for (auto& s : accel) accel_ptrs.push_back(&s);

  BinningConfig cfg;
  cfg.bins = 1;
  cfg.batch_size = 5;
  cfg.min_bin_population = 1;
  const std::uint64_t seed = 99;
  BatchSampler sampler(index, mic_ptrs, accel_ptrs, cfg, seed);

  Rng plain(seed);
  for (int step = 0; step < 8; ++step) {
    auto batch = sampler.next();
    for (const auto& item : batch.items) {
      const auto expect = static_cast<std::size_t>(plain.uniform_below(n));
      REQUIRE(item.clip_id == mic[expect].clip_id);
    }
  }
}

TEST_CASE("sampler draws are seed-deterministic", "[sampler]") {
  const int t = 10;
  std::vector<Spectrogram> mic, accel;
  OccupancyIndex index;
  index.bins = 2;
  index.max_positive_frames = 10;
  for (int i = 0; i < 6; ++i) {
    const std::string cid = cat("c", i);
    mic.push_back(make_spec(3, t, 300 + static_cast<std::uint64_t>(i), cid));
    accel.push_back(make_spec(3, t, 400 + static_cast<std::uint64_t>(i), cid));
    index.records.push_back({cid, i < 3 ? 2 : 9, i < 3 ? 1 : 2});
  }
  std::vector<const Spectrogram*> mic_ptrs, accel_ptrs;
  for (auto& s : mic) mic_ptrs.push_back(&s);
  for (auto& s : accel) accel_ptrs.push_back(&s);

  BinningConfig cfg;
  cfg.bins = 2;
  cfg.batch_size = 4;
  cfg.min_bin_population = 2;
  BatchSampler a(index, mic_ptrs, accel_ptrs, cfg, 7);
  BatchSampler b(index, mic_ptrs, accel_ptrs, cfg, 7);
  for (int step = 0; step < 5; ++step) {
    auto ba = a.next(), bb = b.next();
    for (std::size_t i = 0; i < ba.items.size(); ++i) {
      REQUIRE(ba.items[i].clip_id == bb.items[i].clip_id);
      REQUIRE(ba.items[i].augmented == bb.items[i].augmented);
    }
  }
}

TEST_CASE("sparse bins are filled with augmented pairs", "[sampler]") {
  const int t = 30;
  std::vector<Spectrogram> mic, accel;
  OccupancyIndex index;
  index.bins = 2;
  index.max_positive_frames = 10;
  // Bin 1 is healthy, bin 2 has a single member.
  for (int i = 0; i < 5; ++i) {
    const std::string cid = cat("c", i);
    mic.push_back(make_spec(6, t, 500 + static_cast<std::uint64_t>(i), cid));
    accel.push_back(make_spec(6, t, 600 + static_cast<std::uint64_t>(i), cid));
    index.records.push_back({cid, i < 4 ? 1 : 10, i < 4 ? 1 : 2});
  }
  std::vector<const Spectrogram*> mic_ptrs, accel_ptrs;
  for (auto& s : mic) mic_ptrs.push_back(&s);
  for (auto& s : accel) accel_ptrs.push_back(&s);

  BinningConfig cfg;
  cfg.bins = 2;
  cfg.batch_size = 4;
  cfg.min_bin_population = 4;
  cfg.augment.num_freq_masks = 1;
  cfg.augment.max_freq_width = 2;
  cfg.augment.num_time_masks = 1;
  cfg.augment.max_time_width = 4;
  BatchSampler sampler(index, mic_ptrs, accel_ptrs, cfg, 11);
  REQUIRE(sampler.bin_population(0) == 4);
  REQUIRE(sampler.bin_population(1) == 4);  // 1 original + 3 augmented

  bool saw_augmented = false;
  bool any_masked = false;  // a drawn mask may have width 0, so check overall
  for (int step = 0; step < 20; ++step) {
    auto batch = sampler.next();
    for (const auto& item : batch.items) {
      REQUIRE(item.mic->clip_id == item.accel->clip_id);
      if (item.augmented) {
        saw_augmented = true;
        REQUIRE(item.bin == 2);
        REQUIRE(item.clip_id == "c4");
        if (item.mic->values != mic[4].values ||
            item.accel->values != accel[4].values)
          any_masked = true;
      }
    }
  }
  REQUIRE(saw_augmented);
  REQUIRE(any_masked);
}

TEST_CASE("empty bins are a configuration error naming the bins", "[sampler]") {
  const int t = 10;
  std::vector<Spectrogram> mic, accel;
  OccupancyIndex index;
  index.bins = 3;
  index.max_positive_frames = 9;
  for (int i = 0; i < 3; ++i) {
    const std::string cid = cat("c", i);
    mic.push_back(make_spec(3, t, 700 + static_cast<std::uint64_t>(i), cid));
    accel.push_back(make_spec(3, t, 800 + static_cast<std::uint64_t>(i), cid));
    index.records.push_back({cid, 9, 3});  // everything in bin 3
  }
  std::vector<const Spectrogram*> mic_ptrs, accel_ptrs;
  for (auto& s : mic) mic_ptrs.push_back(&s);
  for (auto& s : accel) accel_ptrs.push_back(&s);

  BinningConfig cfg;
  cfg.bins = 3;
  REQUIRE_THROWS_WITH(BatchSampler(index, mic_ptrs, accel_ptrs, cfg, 1),
                      Catch::Matchers::ContainsSubstring("1 2"));
}

TEST_CASE("sampler rejects clips missing a synchronized channel", "[sampler]") {
  auto mic = make_spec(3, 10, 1, "c0");
  auto accel = make_spec(3, 10, 2, "other");
  OccupancyIndex index;
  index.bins = 1;
  index.max_positive_frames = 1;
  index.records.push_back({"c0", 0, 1});
  BinningConfig cfg;
  cfg.bins = 1;
  REQUIRE_THROWS_AS(BatchSampler(index, {&mic}, {&accel}, cfg, 1),
                    validation_error);
}

TEST_CASE("occupancy index round-trips through CSV", "[sampler]") {
  OccupancyIndex index;
  index.bins = 4;
  index.records = {{"a", 0, 1}, {"b", 17, 2}, {"c", 100, 4}};
  index.max_positive_frames = 100;
  const std::string csv = index_to_csv(index);
  auto back = index_from_csv(csv, 4);
  REQUIRE(back.records.size() == 3);
  REQUIRE(back.max_positive_frames == 100);
  for (std::size_t i = 0; i < 3; ++i) {
    REQUIRE(back.records[i].clip_id == index.records[i].clip_id);
    REQUIRE(back.records[i].positive_frames == index.records[i].positive_frames);
    REQUIRE(back.records[i].bin == index.records[i].bin);
  }
}
