#pragma once

#include <optional>
#include <string>
#include <vector>

namespace pgqa {

/// Six-attribute synthetic user profile that conditions question generation.
struct Persona {
  std::string id;
  std::string name;
  int age = 0;
  std::string gender;
  std::string major_background;
  std::string previous_experience;
  std::string hobbies;

  bool valid() const {
    return !id.empty() && !name.empty() && age > 0 && !gender.empty() &&
           !major_background.empty() && !previous_experience.empty() && !hobbies.empty();
  }
  friend bool operator==(const Persona&, const Persona&) = default;
};

/// One grounded question/answer pair. Answerable records carry a 1-based page.
struct QARecord {
  std::string question;
  std::string answer;
  int page_no = 0;
  bool answerable = true;
  std::string persona_id;
  std::string doc_id;

  friend bool operator==(const QARecord&, const QARecord&) = default;
};

struct DialogueRecord {
  std::string doc_id;
  std::string persona_id;
  std::vector<QARecord> turns;

  friend bool operator==(const DialogueRecord&, const DialogueRecord&) = default;
};

}  // namespace pgqa
