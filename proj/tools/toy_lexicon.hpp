#pragma once

// Closed word list shared by the toy corpus generator and the toy annotator.

#include <map>
#include <string>
#include <vector>

namespace toy {

struct Entry {
  std::string form;
  std::string lemma;
  std::string upos;
};

inline const std::vector<Entry>& lexicon() {
  static const std::vector<Entry> entries = [] {
    std::vector<Entry> e;
    auto add = [&](const std::string& upos, std::initializer_list<std::pair<const char*, const char*>> words) {
      for (const auto& [form, lemma] : words) e.push_back({form, lemma, upos});
    };
    add("PRON", {{"you", "you"}, {"i", "i"}, {"we", "we"}, {"it", "it"}, {"he", "he"},
                 {"she", "she"}, {"they", "they"}, {"me", "me"}, {"what", "what"}});
    add("VERB", {{"want", "want"}, {"see", "see"}, {"look", "look"}, {"go", "go"},
                 {"eat", "eat"}, {"play", "play"}, {"get", "get"}, {"put", "put"},
                 {"like", "like"}, {"need", "need"}, {"give", "give"}, {"read", "read"},
                 {"find", "find"}, {"make", "make"}, {"wants", "want"}, {"likes", "like"},
                 {"eating", "eat"}, {"playing", "play"}, {"going", "go"}, {"looking", "look"},
                 {"sees", "see"}, {"found", "find"}, {"made", "make"}});
    add("NOUN", {{"ball", "ball"}, {"balls", "ball"}, {"dog", "dog"}, {"dogs", "dog"},
                 {"doggie", "doggie"}, {"cat", "cat"}, {"kitty", "kitty"}, {"book", "book"},
                 {"books", "book"}, {"cup", "cup"}, {"juice", "juice"}, {"milk", "milk"},
                 {"shoe", "shoe"}, {"shoes", "shoe"}, {"car", "car"}, {"truck", "truck"},
                 {"block", "block"}, {"blocks", "block"}, {"baby", "baby"}, {"bear", "bear"},
                 {"apple", "apple"}, {"cookie", "cookie"}, {"bath", "bath"}, {"hat", "hat"},
                 {"bird", "bird"}, {"birds", "bird"}, {"spoon", "spoon"}, {"water", "water"},
                 {"train", "train"}, {"bus", "bus"}, {"duck", "duck"}, {"mommy", "mommy"},
                 {"daddy", "daddy"}, {"table", "table"}, {"chair", "chair"},
                 {"picture", "picture"}, {"story", "story"}, {"garden", "garden"},
                 {"park", "park"}, {"friend", "friend"}, {"friends", "friend"},
                 {"school", "school"}, {"teacher", "teacher"}, {"dinner", "dinner"}});
    add("ADJ", {{"big", "big"}, {"little", "little"}, {"red", "red"}, {"blue", "blue"},
                {"nice", "nice"}, {"good", "good"}, {"hot", "hot"}, {"wet", "wet"},
                {"yellow", "yellow"}, {"happy", "happy"}, {"funny", "funny"},
                {"pretty", "pretty"}, {"new", "new"}, {"soft", "soft"}});
    add("INTJ", {{"oh", "oh"}, {"yeah", "yeah"}, {"wow", "wow"}, {"uh-oh", "uh-oh"},
                 {"okay", "okay"}, {"hi", "hi"}, {"bye", "bye"}, {"no", "no"}, {"yes", "yes"},
                 {"hmm", "hmm"}});
    add("DET", {{"the", "the"}, {"a", "a"}, {"this", "this"}, {"your", "your"}, {"my", "my"},
                {"some", "some"}});
    add("ADP", {{"on", "on"}, {"in", "in"}, {"with", "with"}, {"for", "for"}, {"at", "at"}});
    add("AUX", {{"do", "do"}, {"can", "can"}, {"did", "do"}, {"is", "be"}, {"are", "be"},
                {"will", "will"}});
    add("ADV", {{"now", "now"}, {"here", "here"}, {"there", "there"}, {"again", "again"},
                {"too", "too"}, {"where", "where"}});
    add("CCONJ", {{"and", "and"}, {"but", "but"}});
    add("PART", {{"not", "not"}, {"to", "to"}});
    return e;
  }();
  return entries;
}

inline std::vector<std::string> words_with(const std::string& upos) {
  std::vector<std::string> out;
  for (const auto& e : lexicon()) {
    if (e.upos == upos) out.push_back(e.form);
  }
  return out;
}

inline const std::map<std::string, Entry>& by_form() {
  static const std::map<std::string, Entry> m = [] {
    std::map<std::string, Entry> out;
    for (const auto& e : lexicon()) out.emplace(e.form, e);
    return out;
  }();
  return m;
}

}  // namespace toy
