#pragma once

#include <cctype>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "antispoof/common.hpp"

// ASVspoof 2019 LA label handling: attack-family table, the 2-class/3-class
// relabeling, and protocol-file parsing.

namespace antispoof {

inline constexpr int kLabelBonafide = 0;
inline constexpr int kLabelSpoof = 1;  // 2-class
inline constexpr int kLabelTts = 1;    // 3-class
inline constexpr int kLabelVc = 2;     // 3-class

enum class AttackFamily { kTts, kVc };

// A01..A19 -> family. Editable via file; A13-A15 are pinned to TTS in
// relabel_la regardless of the table (they are TTS-VC hybrids usually
// counted with TTS).
using FamilyTable = std::map<std::string, AttackFamily>;

inline FamilyTable default_family_table() {
  FamilyTable t;
  for (int i = 1; i <= 19; ++i) {
    char id[4];
    std::snprintf(id, sizeof(id), "A%02d", i);
    const bool vc = (i == 5 || i == 6 || i == 17 || i == 18 || i == 19);
    t[id] = vc ? AttackFamily::kVc : AttackFamily::kTts;
  }
  return t;
}

// One "Axx TTS|VC" per line; # comments and blank lines allowed.
inline FamilyTable load_family_table(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("load_family_table: cannot open " + path);
  FamilyTable t;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    std::istringstream ss(line);
    std::string id, family;
    if (!(ss >> id) || id[0] == '#') continue;
    if (!(ss >> family))
      throw FormatError("load_family_table: " + path + ":" + std::to_string(line_no) +
                        ": expected 'Axx TTS|VC'");
    if (id.size() != 3 || id[0] != 'A' || !std::isdigit(static_cast<unsigned char>(id[1])) ||
        !std::isdigit(static_cast<unsigned char>(id[2])))
      throw FormatError("load_family_table: " + path + ":" + std::to_string(line_no) +
                        ": bad attack id '" + id + "'");
    if (family == "TTS")
      t[id] = AttackFamily::kTts;
    else if (family == "VC")
      t[id] = AttackFamily::kVc;
    else
      throw FormatError("load_family_table: " + path + ":" + std::to_string(line_no) +
                        ": family must be TTS or VC, got '" + family + "'");
  }
  return t;
}

// attack_id is "bonafide" or "A01".."A19". 2-class: bonafide 0, any attack 1.
// 3-class: bonafide 0, TTS 1, VC 2, with A13/A14/A15 always TTS.
inline int relabel_la(const std::string& attack_id, int num_classes,
                      const FamilyTable& table = default_family_table()) {
  if (num_classes != 2 && num_classes != 3)
    throw ConfigError("relabel_la: num_classes must be 2 or 3");
  if (attack_id == "bonafide") return kLabelBonafide;
  if (num_classes == 2) {
    if (table.find(attack_id) == table.end())
      throw LabelError("relabel_la: unknown attack id '" + attack_id + "'");
    return kLabelSpoof;
  }
  if (attack_id == "A13" || attack_id == "A14" || attack_id == "A15") return kLabelTts;
  const auto it = table.find(attack_id);
  if (it == table.end()) throw LabelError("relabel_la: unknown attack id '" + attack_id + "'");
  return it->second == AttackFamily::kTts ? kLabelTts : kLabelVc;
}

struct ProtocolEntry {
  std::string speaker;
  std::string utt_id;
  std::string attack_id;  // "bonafide" or "Axx"
  bool bonafide = false;
};

// Official LA protocol line: "speaker utt_id system attack key" with "-" for
// the unused fields; key is bonafide|spoof.
inline std::vector<ProtocolEntry> parse_la_protocol(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("parse_la_protocol: cannot open " + path);
  std::vector<ProtocolEntry> entries;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    std::istringstream ss(line);
    std::string speaker, utt, dash, attack, key;
    if (!(ss >> speaker)) continue;
    if (!(ss >> utt >> dash >> attack >> key))
      throw FormatError("parse_la_protocol: " + path + ":" + std::to_string(line_no) +
                        ": expected 5 fields");
    ProtocolEntry e;
    e.speaker = speaker;
    e.utt_id = utt;
    if (key == "bonafide")
      e.bonafide = true;
    else if (key == "spoof")
      e.bonafide = false;
    else
      throw FormatError("parse_la_protocol: " + path + ":" + std::to_string(line_no) +
                        ": key must be bonafide or spoof, got '" + key + "'");
    e.attack_id = attack == "-" ? "bonafide" : attack;
    if (e.bonafide != (e.attack_id == "bonafide"))
      throw LabelError("parse_la_protocol: " + path + ":" + std::to_string(line_no) +
                       ": attack id and key disagree");
    entries.push_back(std::move(e));
  }
  return entries;
}

}  // namespace antispoof
