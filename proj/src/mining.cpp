#include "muvfs/mining.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>

#include "muvfs/parallel.hpp"
#include "muvfs/sampling.hpp"

namespace muvfs::mining {

void MiningConfig::validate() const {
  if (way < 2) throw std::invalid_argument("mining: way must be at least 2");
  if (n < way) throw std::invalid_argument("mining: n must be at least way");
  if (mining_batch < 2 * n) throw std::invalid_argument("mining: mining_batch must be at least 2n");
  if (!(exploration_fraction >= 0.0)) throw std::invalid_argument("mining: exploration_fraction must be non-negative");
  if (shots < 1 || queries < 1) throw std::invalid_argument("mining: shots and queries must be positive");
}

ScoredEmbeddings agreement_scores(const synthvid::VideoStore& store, const std::vector<std::int64_t>& ids,
                                  const streams::TwoStreamModel& model, const synthvid::AugmentationConfig& aug, Rng& rng) {
  if (ids.size() < 2) throw std::invalid_argument("agreement_scores: need at least 2 videos");
  const auto ap_scheme = model.config().appearance();
  const auto act_scheme = model.config().action();
  std::vector<std::uint64_t> seeds(ids.size());
  for (auto& s : seeds) s = rng();
  std::vector<synthvid::View> views(4 * ids.size());
  parallel_for(ids.size(), worker_count(), [&](std::size_t i) {
    const auto& video = store.video(ids[i]);
    Rng local(seeds[i]);
    views[4 * i + 0] = synthvid::make_view(video, ap_scheme, aug, local);
    views[4 * i + 1] = synthvid::make_view(video, ap_scheme, aug, local);
    views[4 * i + 2] = synthvid::make_view(video, act_scheme, aug, local);
    views[4 * i + 3] = synthvid::make_view(video, act_scheme, aug, local);
  });
  NoGradGuard no_grad;
  const auto& cfg = model.config();
  auto collect = [&](std::size_t slot, bool appearance) {
    std::vector<const synthvid::Frames*> ptr;
    for (std::size_t i = 0; i < ids.size(); ++i) ptr.push_back(&views[4 * i + slot].frames);
    if (appearance) {
      return streams::encode_appearance(model.appearance, streams::pack_frames(ptr, streams::input_norm(cfg)), ids.size(), ptr.front()->count).mean;
    }
    return streams::encode_action(model.action, streams::pack_clips(ptr, streams::input_norm(cfg)), ptr.front()->count);
  };
  ScoredEmbeddings out;
  out.ap_a = collect(0, true);
  out.ap_b = collect(1, true);
  out.act_a = collect(2, false);
  out.act_b = collect(3, false);
  out.scores.ids = ids;
  out.scores.ap = cosine_similarity(out.ap_a, out.ap_b).to_vector();
  out.scores.act = cosine_similarity(out.act_a, out.act_b).to_vector();
  return out;
}

std::vector<std::int64_t> HardPool::ids() const {
  std::vector<std::int64_t> out;
  for (const auto& m : members) out.push_back(m.video_id);
  return out;
}

std::size_t HardPool::base_size() const {
  return static_cast<std::size_t>(
      std::count_if(members.begin(), members.end(), [](const PoolMember& m) { return m.selected_by != "exploration"; }));
}

std::string HardPool::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& m : members) {
    arr.push_back({{"video_id", m.video_id}, {"score_ap", m.score_ap}, {"score_act", m.score_act}, {"selected_by", m.selected_by}});
  }
  return arr.dump(1);
}

std::vector<std::int64_t> lowest_n(const std::vector<std::int64_t>& ids, const std::vector<double>& scores, std::size_t n) {
  if (ids.size() != scores.size()) throw std::invalid_argument("lowest_n: ids and scores differ in length");
  std::vector<std::size_t> order(ids.size());
  std::iota(order.begin(), order.end(), 0);
  n = std::min(n, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] != scores[b] ? scores[a] < scores[b] : ids[a] < ids[b];
  });
  std::vector<std::int64_t> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(ids[order[i]]);
  return out;
}

std::size_t exploration_count(std::size_t base, double fraction) {
  // The small guard keeps e.g. 0.1 * 30 from rounding up to 4.
  return static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(base) - 1e-9));
}

HardPool mine_hard(const AgreementScores& scores, const MiningConfig& config, Rng& rng) {
  const std::size_t m = scores.ids.size();
  if (scores.ap.size() != m || scores.act.size() != m) throw std::invalid_argument("mine_hard: score lists differ in length");
  if (config.n > m) {
    throw std::invalid_argument("mine_hard: n = " + std::to_string(config.n) + " exceeds the " + std::to_string(m) +
                                " scored videos");
  }
  std::map<std::int64_t, std::size_t> position;
  for (std::size_t i = 0; i < m; ++i) {
    if (!position.emplace(scores.ids[i], i).second) throw std::invalid_argument("mine_hard: duplicate video id");
  }
  const auto by_ap = lowest_n(scores.ids, scores.ap, config.n);
  const auto by_act = lowest_n(scores.ids, scores.act, config.n);
  std::map<std::int64_t, std::string> base;
  for (auto id : by_ap) base[id] = "appearance";
  for (auto id : by_act) {
    auto [it, inserted] = base.emplace(id, "action");
    if (!inserted) it->second = "both";
  }
  HardPool pool;
  for (const auto& [id, how] : base) {
    const std::size_t i = position[id];
    pool.members.push_back({id, scores.ap[i], scores.act[i], how});
  }
  std::vector<std::size_t> rest;
  for (std::size_t i = 0; i < m; ++i) {
    if (!base.count(scores.ids[i])) rest.push_back(i);
  }
  const std::size_t extras = std::min(exploration_count(base.size(), config.exploration_fraction), rest.size());
  for (std::size_t j : sample_without_replacement(rng, rest.size(), extras)) {
    const std::size_t i = rest[j];
    pool.members.push_back({scores.ids[i], scores.ap[i], scores.act[i], "exploration"});
  }
  return pool;
}

std::string check_episode(const Episode& e, std::size_t shots, std::size_t queries) {
  if (e.way < 2 || e.class_ids.size() != e.way) return "class list does not match the way";
  if (std::set<std::int64_t>(e.class_ids.begin(), e.class_ids.end()).size() != e.way) return "classes are not distinct";
  if (e.support.size() != e.way * shots) return "support holds " + std::to_string(e.support.size()) + " items";
  if (e.query.size() != e.way * queries) return "query holds " + std::to_string(e.query.size()) + " items";
  std::vector<std::size_t> support_count(e.way, 0), query_count(e.way, 0);
  for (const auto& it : e.support) {
    if (it.label < 0 || static_cast<std::size_t>(it.label) >= e.way) return "support label out of range";
    ++support_count[static_cast<std::size_t>(it.label)];
  }
  for (const auto& it : e.query) {
    if (it.label < 0 || static_cast<std::size_t>(it.label) >= e.way) return "query label out of range";
    ++query_count[static_cast<std::size_t>(it.label)];
  }
  for (std::size_t c = 0; c < e.way; ++c) {
    if (support_count[c] != shots) return "class " + std::to_string(c) + " has the wrong support count";
    if (query_count[c] != queries) return "class " + std::to_string(c) + " has the wrong query count";
  }
  if (e.mode == EpisodeMode::Labeled) {
    std::set<std::int64_t> videos;
    for (const auto& it : e.support) videos.insert(it.video_id);
    for (const auto& it : e.query) videos.insert(it.video_id);
    if (videos.size() != e.support.size() + e.query.size()) return "a video appears twice";
  } else {
    std::set<std::pair<std::int64_t, std::uint64_t>> draws;
    for (const auto* items : {&e.support, &e.query}) {
      for (const auto& it : *items) {
        if (it.video_id != e.class_ids[static_cast<std::size_t>(it.label)]) return "instance item under a foreign label";
        draws.emplace(it.video_id, it.view_seed);
      }
    }
    if (draws.size() != e.support.size() + e.query.size()) return "an augmentation draw appears twice";
  }
  return {};
}

std::vector<Episode> build_instance_episodes(const HardPool& pool, const MiningConfig& config, std::size_t count, Rng& rng) {
  const auto ids = pool.ids();
  if (ids.size() < config.way) {
    throw std::invalid_argument("build_instance_episodes: pool of " + std::to_string(ids.size()) + " is smaller than way " +
                                std::to_string(config.way));
  }
  std::vector<Episode> out(count);
  for (auto& e : out) {
    e.way = config.way;
    e.mode = EpisodeMode::Instance;
    const auto chosen = sample_without_replacement(rng, ids.size(), config.way);
    for (std::size_t c = 0; c < chosen.size(); ++c) {
      const auto id = ids[chosen[c]];
      e.class_ids.push_back(id);
      for (std::size_t s = 0; s < config.shots; ++s) e.support.push_back({id, static_cast<int>(c), rng()});
      for (std::size_t q = 0; q < config.queries; ++q) e.query.push_back({id, static_cast<int>(c), rng()});
    }
  }
  return out;
}

std::vector<TestItem> novel_items(const synthvid::DatasetManifest& manifest) {
  std::vector<TestItem> out;
  for (const auto& e : manifest.videos) {
    if (e.split == synthvid::Split::NovelTest) out.push_back({e.video_id, e.joint_class, 0});
  }
  return out;
}

std::vector<Episode> sample_test_episodes(const std::vector<TestItem>& items, const TestSampling& s, Rng& rng) {
  if (s.way < 2 || s.shot < 1 || s.queries < 1) throw std::invalid_argument("sample_test_episodes: invalid way/shot/queries");
  std::map<int, std::vector<std::int64_t>> videos_of;
  std::map<int, int> group_of;
  for (const auto& it : items) {
    videos_of[it.class_id].push_back(it.video_id);
    group_of[it.class_id] = s.grouped ? it.group : 0;
  }
  std::map<int, std::vector<int>> eligible;  // group -> classes
  for (auto& [cls, vids] : videos_of) {
    std::sort(vids.begin(), vids.end());
    if (vids.size() >= s.shot + s.queries) eligible[group_of[cls]].push_back(cls);
  }
  std::vector<int> groups;
  for (const auto& [g, classes] : eligible) {
    if (classes.size() >= s.way) groups.push_back(g);
  }
  if (groups.empty()) {
    throw std::invalid_argument("sample_test_episodes: no " + std::string(s.grouped ? "group" : "split") + " has " +
                                std::to_string(s.way) + " classes with " + std::to_string(s.shot + s.queries) + " videos each");
  }
  std::vector<Episode> out(s.episodes);
  for (auto& e : out) {
    e.way = s.way;
    e.mode = EpisodeMode::Labeled;
    const auto& classes = eligible[groups[uniform_index(rng, groups.size())]];
    const auto chosen = sample_without_replacement(rng, classes.size(), s.way);
    for (std::size_t c = 0; c < chosen.size(); ++c) {
      const int cls = classes[chosen[c]];
      e.class_ids.push_back(cls);
      const auto& vids = videos_of[cls];
      const auto picks = sample_without_replacement(rng, vids.size(), s.shot + s.queries);
      for (std::size_t k = 0; k < picks.size(); ++k) {
        EpisodeItem item{vids[picks[k]], static_cast<int>(c), 0};
        (k < s.shot ? e.support : e.query).push_back(item);
      }
    }
  }
  return out;
}

}  // namespace muvfs::mining
