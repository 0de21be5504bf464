use patterncore::{coreengine, dsl, generic, patspace, Budget};
use std::time::Instant;

fn main() {
    // random graph at level (2,2,2)
    let src = "theory graphs { sort V; rel E(V,V) symmetric irreflexive; gamma adj { x: V; formulas: E(x,y), x = y; } }";
    let doc = dsl::parse_theory(src).unwrap();
    let pt = doc.primary();
    let g = generic::build_generic(&pt.theory, &generic::GenericBuildSpec::uniform(8, 1, 3, 0), Budget::default()).unwrap();
    let t0 = Instant::now();
    let opts = coreengine::ExtractOpts::new(patspace::Level::new(2, 2, 2));
    let ex = coreengine::extract_core(&g.model, &pt.theory, &pt.gammas[0], &opts, Budget::default()).unwrap();
    let aut = coreengine::automorphism_group(&ex.core.structure, Budget::default()).unwrap();
    println!("random graph: core size {} aut {} [{}ms] complete={} minimal={}",
        ex.core.points.len(), aut.order, t0.elapsed().as_millis(), ex.core.mining_complete, ex.core.minimal_certain);

    // pure set
    let src2 = "theory eq { sort V; gamma idy { x: V; formulas: x = y; } }";
    let doc2 = dsl::parse_theory(src2).unwrap();
    let pt2 = doc2.primary();
    let mut m = patterncore::sig::FinStructure::empty(pt2.theory.signature.clone());
    m.carriers[0] = 5;
    let ex2 = coreengine::extract_core(&m, &pt2.theory, &pt2.gammas[0], &opts, Budget::default()).unwrap();
    println!("pure set: core size {}", ex2.core.points.len());

    // antireflexive ternary R at level (2,3,3)
    let src3 = "theory anti_r { sort V; rel R(V,V,V); forbid x:V, y:V : R(x,y,y); gamma rxy { x: V; formulas: R(x,y,z); } }";
    let doc3 = dsl::parse_theory(src3).unwrap();
    let pt3 = doc3.primary();
    let t1 = Instant::now();
    let g3 = generic::build_generic(&pt3.theory, &generic::GenericBuildSpec::uniform(5, 1, 3, 0), Budget::default()).unwrap();
    println!("ternary generic built [{}ms], defects {}", t1.elapsed().as_millis(), g3.defects.len());
    let t2 = Instant::now();
    let opts3 = coreengine::ExtractOpts::new(patspace::Level::new(2, 3, 3));
    let ex3 = coreengine::extract_core(&g3.model, &pt3.theory, &pt3.gammas[0], &opts3, Budget::default()).unwrap();
    let aut3 = coreengine::automorphism_group(&ex3.core.structure, Budget::default()).unwrap();
    println!("ternary R: core size {} aut {} [{}ms] complete={} minimal={} subspace={}",
        ex3.core.points.len(), aut3.order, t2.elapsed().as_millis(), ex3.core.mining_complete, ex3.core.minimal_certain, ex3.core.subspace.len());
}
