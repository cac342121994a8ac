#include "cfope/dataset_io.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <vector>

#include "cfope/format.hpp"

namespace cfope {
namespace {

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

[[noreturn]] void fail(std::size_t line_no, const std::string& message) {
    throw std::invalid_argument("cohort csv line " + std::to_string(line_no) + ": " + message);
}

}  // namespace

std::string cohort_csv_header() {
    std::string header = "patient_id";
    for (const char* name : predictive_feature_names()) {
        header += ",";
        header += name;
    }
    header += ",comorbidity_flag,baseline_lab,action_mEq,next_lab,reward";
    return header;
}

void write_cohort_csv(std::ostream& out, const BehaviorDataset& dataset) {
    out << cohort_csv_header() << "\n";
    for (const auto& s : dataset.samples) {
        const auto& c = s.context;
        out << s.id << "," << format_double(c.age) << ","
            << (c.gender == Gender::Male ? "M" : "F") << "," << format_double(c.weight) << ","
            << format_double(c.height) << "," << format_double(c.heart_rate) << ","
            << format_double(c.respiratory_rate) << "," << format_double(c.spo2) << ","
            << format_double(c.systolic_bp) << "," << format_double(c.diastolic_bp) << ","
            << format_double(c.serum_creatinine) << "," << format_double(c.nacl_09_given) << ","
            << format_double(c.dextrose_5_given) << "," << format_double(c.propofol_given) << ","
            << format_double(c.norepinephrine_given) << "," << format_double(c.insulin_given)
            << "," << (c.comorbidity_flag ? 1 : 0) << "," << format_double(c.baseline_lab) << ","
            << format_double(dataset.actions.dosages[s.action_index]) << ","
            << format_double(s.next_lab) << "," << format_double(s.reward) << "\n";
    }
}

std::string cohort_to_csv(const BehaviorDataset& dataset) {
    std::ostringstream out;
    write_cohort_csv(out, dataset);
    return out.str();
}

BehaviorDataset read_cohort_csv(std::istream& in, Task task) {
    BehaviorDataset dataset;
    dataset.task = task;
    dataset.actions = ActionSpace::for_task(task);
    dataset.reward_spec = RewardSpec::for_task(task);

    std::string line;
    if (!std::getline(in, line)) throw std::invalid_argument("cohort csv: empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != cohort_csv_header())
        throw std::invalid_argument("cohort csv: unexpected header: " + line);

    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = split_fields(line);
        if (fields.size() != 21)
            fail(line_no, "expected 21 fields, found " + std::to_string(fields.size()));

        try {
            ClinicalContext c;
            const std::int64_t id = static_cast<std::int64_t>(std::stoll(fields[0]));
            c.age = parse_double(fields[1]);
            if (fields[2] == "F" || fields[2] == "0")
                c.gender = Gender::Female;
            else if (fields[2] == "M" || fields[2] == "1")
                c.gender = Gender::Male;
            else
                throw std::invalid_argument("unknown gender value: " + fields[2]);
            c.weight = parse_double(fields[3]);
            c.height = parse_double(fields[4]);
            c.heart_rate = parse_double(fields[5]);
            c.respiratory_rate = parse_double(fields[6]);
            c.spo2 = parse_double(fields[7]);
            c.systolic_bp = parse_double(fields[8]);
            c.diastolic_bp = parse_double(fields[9]);
            c.serum_creatinine = parse_double(fields[10]);
            c.nacl_09_given = parse_double(fields[11]);
            c.dextrose_5_given = parse_double(fields[12]);
            c.propofol_given = parse_double(fields[13]);
            c.norepinephrine_given = parse_double(fields[14]);
            c.insulin_given = parse_double(fields[15]);
            if (fields[16] == "0")
                c.comorbidity_flag = false;
            else if (fields[16] == "1")
                c.comorbidity_flag = true;
            else
                throw std::invalid_argument("comorbidity_flag must be 0 or 1");
            c.baseline_lab = parse_double(fields[17]);

            const double dose = parse_double(fields[18]);
            const double next_lab = parse_double(fields[19]);
            const double stored_reward = parse_double(fields[20]);

            Sample s = make_sample(id, std::move(c), dataset.actions.index_of(dose), next_lab,
                                   dataset.reward_spec);
            if (std::abs(s.reward - stored_reward) > 1e-9)
                throw std::invalid_argument("reward column is inconsistent with next_lab");
            dataset.samples.push_back(std::move(s));
        } catch (const std::invalid_argument& e) {
            fail(line_no, e.what());
        }
    }
    return dataset;
}

}  // namespace cfope
