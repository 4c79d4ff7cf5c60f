//! Generate a procedural indoor map, walk a scripted loop through it, and
//! write the trajectory as a PGM image. Prints what the agent sees along
//! the way: visible object categories with their screen-area fractions.
//!
//! Run with: cargo run --release --example world_tour

use curio::world::{
    generate_world, render_observation, render_trajectory_map, step, visited_coverage, Action,
    GenConfig, MotionConfig, CATEGORY_NAMES,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = GenConfig::default();
    let map = generate_world(42, &config)?;
    println!(
        "map: {0}x{0} cells, {1} object instances",
        config.grid_size,
        map.objects().len()
    );

    let motion = MotionConfig::default();
    let mut pose = map.default_start();
    let mut poses = vec![pose];
    // forward bursts with quarter-ish turns: a loop through nearby rooms
    let script: Vec<Action> = (0..8)
        .flat_map(|_| {
            std::iter::repeat(Action::Forward)
                .take(20)
                .chain(std::iter::repeat(Action::Left).take(6))
        })
        .collect();
    for (i, &action) in script.iter().enumerate() {
        pose = step(&map, &pose, action, &motion);
        poses.push(pose);
        if i % 26 == 0 {
            let obs = render_observation(&map, &pose);
            let mut seen: Vec<String> = obs
                .visible
                .iter()
                .map(|v| format!("{} {:.1}%", CATEGORY_NAMES[v.category as usize], 100.0 * v.area_frac))
                .collect();
            seen.sort();
            println!(
                "step {i:3}  pos ({:5.1},{:5.1}) heading {:5.1}  sees [{}]",
                pose.x,
                pose.y,
                pose.heading_deg,
                seen.join(", ")
            );
        }
    }
    println!("visited coverage: {:.4}", visited_coverage(&map, &poses));

    let image = render_trajectory_map(&map, &poses, 4);
    std::fs::write("world_tour.pgm", &image)?;
    println!("wrote world_tour.pgm ({} bytes)", image.len());
    Ok(())
}
