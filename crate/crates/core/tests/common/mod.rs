//! Shared fixtures for integration tests.

use std::path::Path;

/// Expected counts of the metropolitan-scale ingest fixture.
pub const FIXTURE_ZONES: usize = 2_830;
pub const FIXTURE_HOSPITALS: usize = 35;
pub const FIXTURE_FLOWS_RAW: usize = 16_783;
pub const FIXTURE_FLOWS_AFTER_EXCLUSION: usize = 16_730;

/// Origins whose flows represent medical tourism and get excluded
/// (an airport-style block group plus a second visitor-heavy block group;
/// together they carry 53 flows).
pub const TOURISM_ORIGINS: [&str; 2] = ["482019801001", "482019801002"];

/// Deterministically writes a metropolitan-scale fixture: 2,830 zones, 35
/// hospitals, and 16,783 aggregated origin-hospital pairs whose four-year
/// average volumes span exactly [4, 2774.75]. The two tourism origins
/// together hold 53 flows, so excluding them leaves 16,730.
#[allow(dead_code)]
pub fn write_paper_shaped_fixture(dir: &Path) {
    let n_regular_zones = FIXTURE_ZONES - TOURISM_ORIGINS.len();

    let mut zones = String::from(
        "zone_id,total_population,pct_under18,pct_over65,pct_hispanic,pct_white,pct_black,pct_asian,pct_bachelor_plus,median_income,pct_households_vehicle,lon,lat\n",
    );
    let mut zone_ids = Vec::with_capacity(FIXTURE_ZONES);
    for i in 0..n_regular_zones {
        let id = format!("4820100{i:04}");
        zones.push_str(&format!(
            "{id},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            500 + (i * 7) % 4000,
            5 + (i * 3) % 35,
            2 + (i * 5) % 30,
            (i * 11) % 95,
            (i * 13) % 95,
            (i * 17) % 95,
            (i * 19) % 60,
            5 + (i * 23) % 70,
            20_000 + (i * 37) % 120_000,
            50 + (i * 29) % 50,
            -95.8 + (i % 60) as f64 * 0.012,
            29.5 + (i / 60) as f64 * 0.012,
        ));
        zone_ids.push(id);
    }
    for id in TOURISM_ORIGINS {
        zones.push_str(&format!(
            "{id},120,5,3,20,40,20,10,30,45000,80,-95.33,29.98\n"
        ));
        zone_ids.push(id.to_string());
    }
    std::fs::write(dir.join("zones.csv"), zones).unwrap();

    let mut hospitals = String::from(
        "hospital_id,staffed_all_beds,staffed_icu_beds,licensed_all_beds,all_bed_occupancy,icu_occupancy,n_reviews,rating,lon,lat\n",
    );
    for h in 0..FIXTURE_HOSPITALS {
        hospitals.push_str(&format!(
            "H{h:02},{},{},{},{},{},{},{},{},{}\n",
            (h * 113) % 1311,
            (h * 19) % 163,
            ((h * 113) % 1311 + 90).min(1403),
            0.01 * ((h * 7) % 86) as f64,
            0.01 * ((h * 11) % 92) as f64,
            2 + (h * 107) % 3762,
            1.0 + 0.1 * ((h * 3) % 39) as f64,
            -95.7 + (h % 7) as f64 * 0.09,
            29.55 + (h / 7) as f64 * 0.09,
        ));
    }
    std::fs::write(dir.join("hospitals.csv"), hospitals).unwrap();

    // regular pairs: the first 2,590 zones connect to 6 hospitals each,
    // the remaining 238 to 5, totalling 16,730
    let mut pairs: Vec<(String, usize)> = Vec::with_capacity(FIXTURE_FLOWS_RAW);
    for (i, id) in zone_ids[..n_regular_zones].iter().enumerate() {
        let count = if i < 2_590 { 6 } else { 5 };
        for j in 0..count {
            pairs.push((id.clone(), (i + 6 * j) % FIXTURE_HOSPITALS));
        }
    }
    // tourism pairs: 35 + 18 = 53
    for h in 0..FIXTURE_HOSPITALS {
        pairs.push((TOURISM_ORIGINS[0].to_string(), h));
    }
    for h in 0..18 {
        pairs.push((TOURISM_ORIGINS[1].to_string(), h));
    }
    assert_eq!(pairs.len(), FIXTURE_FLOWS_RAW);

    // four-year window totals in [16, 11099] so averages span [4, 2774.75];
    // the first pair takes the minimum and the second the maximum exactly
    let mut flows = String::from("origin_zone_id,hospital_id,period_label,visits\n");
    let mut drivetime = String::from("origin_zone_id,hospital_id,drive_time_min\n");
    let mut state = 0x243F6A8885A308D3u64;
    for (idx, (zone, hosp)) in pairs.iter().enumerate() {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        let total: u64 = match idx {
            0 => 16,
            1 => 11_099,
            _ => 16 + state % (11_099 - 16),
        };
        // split the total over 1-4 yearly records
        let n_years = 1 + (idx % 4) as u64;
        let base = total / n_years;
        let mut remainder = total - base * n_years;
        for year in 0..n_years {
            let visits = base + if remainder > 0 { 1 } else { 0 };
            remainder = remainder.saturating_sub(1);
            if visits > 0 {
                flows.push_str(&format!("{zone},H{hosp:02},{},{visits}\n", 2020 + year));
            }
        }
        let minutes = 1.65 + (state % 6830) as f64 * 0.01; // 1.65 .. 69.95
        drivetime.push_str(&format!("{zone},H{hosp:02},{minutes}\n"));
    }
    std::fs::write(dir.join("flows.csv"), flows).unwrap();
    std::fs::write(dir.join("drivetime.csv"), drivetime).unwrap();
}
