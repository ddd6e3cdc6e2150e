use orbitfl::orbits::*;

fn station(lat: f64, lon: f64) -> GroundStation {
    GroundStation { latitude_rad: lat.to_radians(), longitude_rad: lon.to_radians(), altitude_m: 0.0 }
}

fn fleets() -> Vec<OrbitalElements> {
    walker_constellation(&[
        WalkerGroup { planes: 2, sats_per_plane: 6, altitude_m: 1_400_000.0, inclination_deg: 97.4 },
        WalkerGroup { planes: 2, sats_per_plane: 6, altitude_m: 1_600_000.0, inclination_deg: 63.0 },
        WalkerGroup { planes: 2, sats_per_plane: 5, altitude_m: 1_800_000.0, inclination_deg: 45.0 },
        WalkerGroup { planes: 2, sats_per_plane: 4, altitude_m: 2_000_000.0, inclination_deg: 27.0 },
        WalkerGroup { planes: 2, sats_per_plane: 3, altitude_m: 2_000_000.0, inclination_deg: 9.0 },
    ]).unwrap()
}

#[test]
#[ignore]
fn probe_sparse() {
    let sets_of_stations: Vec<(&str, Vec<GroundStation>)> = vec![
        ("S6", vec![
            station(78.2, 15.4), station(-72.0, 2.5), station(37.9, -75.5),
            station(13.0, 77.6), station(-2.0, -44.0), station(-23.7, 133.9),
        ]),
        ("S8", vec![
            station(78.2, 15.4), station(-72.0, 2.5), station(37.9, -75.5),
            station(25.2, 55.3), station(13.0, 77.6), station(19.8, -155.5),
            station(-2.0, -44.0), station(-23.7, 133.9),
        ]),
        ("S10", vec![
            station(78.2, 15.4), station(-72.0, 2.5), station(37.9, -75.5),
            station(25.2, 55.3), station(13.0, 77.6), station(19.8, -155.5),
            station(-2.0, -44.0), station(-23.7, 133.9), station(-42.8, 147.3),
            station(-53.2, -70.9),
        ]),
    ];
    for alpha in [10.0f64, 12.0] {
        for (label, stations) in &sets_of_stations {
            let sets = compute_connectivity(&fleets(), stations, alpha.to_radians(), 900.0, 480, 60.0).unwrap();
            let stats = connectivity_stats(&sets);
            let total: usize = stats.per_index_counts.iter().sum();
            let max_c = stats.per_index_counts.iter().max().unwrap();
            let min_n = stats.per_satellite_visits.iter().min().unwrap();
            let max_n = stats.per_satellite_visits.iter().max().unwrap();
            let mut worst_gap = 0usize;
            for k in 0..48u32 {
                let (mut last, mut gap) = (0usize, 0usize);
                for i in 0..480 {
                    if sets.at(i).contains(&k) {
                        gap = gap.max(i - last);
                        last = i;
                    }
                }
                worst_gap = worst_gap.max(gap.max(480 - last));
            }
            println!(
                "alpha={alpha} {label}: avg |C| {:.2} max {max_c} visits [{min_n},{max_n}] worst gap {worst_gap}",
                total as f64 / 480.0
            );
        }
    }
}
