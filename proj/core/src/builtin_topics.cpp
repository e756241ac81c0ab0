#include <algorithm>
#include <array>
#include <string_view>

#include "affectgen/bags.hpp"

namespace affectgen {
namespace {

struct BuiltinTopic {
  std::string_view name;
  std::string_view words;  // space separated
};

constexpr std::array<BuiltinTopic, 7> kTopics = {{
    {"politics",
     "politics political government law laws king kings queen queens emperor empire nation "
     "nations state states president senate congress parliament election vote power authority "
     "rights citizens republic democracy crown throne royal majesty governor duke czar policy "
     "public society council treaty tax taxes budget liberty freedom official office party "
     "minister"},
    {"technology",
     "technology machine machines engine engines invention instrument instruments tool tools "
     "iron steel forge hammer anvil compass compasses quadrant telescope wheel lamp lantern clock "
     "magnetic needle mechanical contrivances apparatus electric steam pistol musket cannon "
     "device computer software wire pump pumps windlass capstan"},
    {"religion",
     "god gods heaven hell church churches chapel pulpit bible prayer prayers pray priest "
     "priests holy sacred soul souls spirit spiritual divine sin sins angel angels prophet faith "
     "worship idol pagan christian christians sermon deacon bishop salvation resurrection "
     "temple blessed eternal eternity mercy"},
    {"science",
     "science scientific naturalists nature anatomy anatomical species cetology geological "
     "measure measured experiment theory philosophers history historical knowledge study "
     "latitude longitude chart charts microscope chemistry physics biology fossil skeleton "
     "vertebrae structure observation observe fact facts classification system"},
    {"military",
     "war battle army navy navies soldier soldiers officer officers commander commodore weapon "
     "weapons sword spear spears musket cannon attack fight fighting enemy foes guard military "
     "siege victory defeat frigate armed gun guns powder"},
    {"sea",
     "sea seas ocean oceans ship ships sail sails wave waves boat boats voyage harbor shore deck "
     "mast anchor tide sailor sailors crew water waters wind storm"},
    {"food",
     "food supper dinner breakfast bread meat beef steak chowder cheese butter biscuit pudding "
     "dumplings coffee wine beer meals eating drink drinking feast hungry cook cooked"},
}};

std::vector<std::string> split_words(std::string_view words) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos < words.size()) {
    auto end = words.find(' ', pos);
    if (end == std::string_view::npos) end = words.size();
    if (end > pos) out.emplace_back(words.substr(pos, end - pos));
    pos = end + 1;
  }
  return out;
}

}  // namespace

std::vector<std::string> builtin_topic_names() {
  std::vector<std::string> names;
  for (const auto& t : kTopics) names.emplace_back(t.name);
  return names;
}

std::optional<std::vector<std::string>> builtin_topic_words(std::string_view name) {
  auto it = std::find_if(kTopics.begin(), kTopics.end(), [&](const auto& t) { return t.name == name; });
  if (it == kTopics.end()) return std::nullopt;
  return split_words(it->words);
}

}  // namespace affectgen
