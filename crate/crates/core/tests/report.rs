use frailty_metrics::discrepancy::fit_ols;
use frailty_metrics::predictor::{PredictionRow, PredictionTable};
use frailty_metrics::report::{render_forest_plot, render_hr_table, render_scatter, ForestRow, ReportError};
use frailty_metrics::survival::CoxFitResult;

fn result(rows: &[(f64, f64, f64, f64)]) -> CoxFitResult {
    let n = rows.len();
    CoxFitResult {
        beta: rows.iter().map(|r| r.0.ln()).collect(),
        se: vec![0.1; n],
        hr: rows.iter().map(|r| r.0).collect(),
        ci_low: rows.iter().map(|r| r.1).collect(),
        ci_high: rows.iter().map(|r| r.2).collect(),
        z: vec![1.0; n],
        p_value: rows.iter().map(|r| r.3).collect(),
        log_likelihood: -10.0,
        loglik_trace: vec![-12.0, -10.0],
        iterations: 2,
        converged: true,
    }
}

fn parse(svg: &str) -> roxmltree::Document<'_> {
    roxmltree::Document::parse(svg).expect("well-formed SVG")
}

fn count(doc: &roxmltree::Document, tag: &str, class: Option<&str>) -> usize {
    doc.descendants()
        .filter(|n| n.has_tag_name(tag) && class.is_none_or(|c| n.attribute("class") == Some(c)))
        .count()
}

fn attr(node: roxmltree::Node, name: &str) -> f64 {
    node.attribute(name).unwrap().parse().unwrap()
}

#[test]
fn paper_style_rows() {
    let r = result(&[(0.914, 0.840, 0.994, 0.036), (1.9, 1.4, 2.6, 0.0004)]);
    let table = render_hr_table(&r, &["AI Age Discrepancy", "Minimally Invasive Surgery"]).unwrap();
    assert_eq!(table.rows[0].cells(), "0.914 & (0.840 - 0.994) & 0.036");
    assert_eq!(table.rows[1].p, "<0.001");
    assert!(table.rows.iter().all(|r| r.significant));
    assert_eq!(table.to_csv(), render_hr_table(&r, &["AI Age Discrepancy", "Minimally Invasive Surgery"]).unwrap().to_csv());
    assert!(matches!(render_hr_table(&r, &["one"]), Err(ReportError::LabelMismatch { .. })));
}

#[test]
fn forest_plot_geometry() {
    let svg = render_forest_plot(&[ForestRow::new("Flat", 1.0, 1.0, 1.0, 1.0)], "t").unwrap();
    let doc = parse(&svg);
    let root = doc.root_element();
    assert_eq!(root.attribute("viewBox"), Some("0 0 800 120"));
    let reference = doc.descendants().find(|n| n.attribute("class") == Some("reference")).unwrap();
    let marker = doc.descendants().find(|n| n.attribute("class") == Some("marker")).unwrap();
    let whisker = doc.descendants().find(|n| n.attribute("class") == Some("whisker")).unwrap();
    assert_eq!(attr(marker, "x") + 4.0, attr(reference, "x1"));
    assert_eq!(attr(whisker, "x1"), attr(whisker, "x2"));
}

#[test]
fn significant_risk_factor_sits_right_of_reference() {
    let rows = [
        ForestRow::new("AI Age Discrepancy", 1.242, 1.048, 1.472, 0.012),
        ForestRow::new("Metastasis", 2.753, 1.562, 4.848, 0.0004),
        ForestRow::new("T stage >= 3 & <N>", 0.8, 0.5, 1.3, 0.4),
    ];
    let svg = render_forest_plot(&rows, "Overall survival").unwrap();
    let doc = parse(&svg);
    let x0 = attr(doc.descendants().find(|n| n.attribute("class") == Some("reference")).unwrap(), "x1");
    let whiskers: Vec<_> = doc.descendants().filter(|n| n.attribute("class") == Some("whisker")).collect();
    assert_eq!(whiskers.len(), 3);
    assert_eq!(count(&doc, "rect", Some("marker")), 3);
    assert!(attr(whiskers[1], "x1") > x0);
    assert!(attr(whiskers[2], "x1") < x0 && attr(whiskers[2], "x2") > x0);
    assert!(svg.contains("T stage &gt;= 3 &amp; &lt;N&gt;"));
    assert_eq!(doc.root_element().attribute("height"), Some("200"));
}

#[test]
fn forest_plot_errors() {
    assert_eq!(render_forest_plot(&[], "t"), Err(ReportError::EmptyRows));
    assert!(matches!(
        render_forest_plot(&[ForestRow::new("Zero", 0.0, 0.0, 1.0, 0.5)], "t"),
        Err(ReportError::NonPositiveHR { .. })
    ));
}

fn predictions(ages: &[f64], preds: &[f64]) -> PredictionTable {
    PredictionTable::new(
        ages.iter()
            .zip(preds)
            .enumerate()
            .map(|(i, (&a, &p))| PredictionRow {
                patient_id: format!("p{i}"),
                predicted_age: p,
                chronological_age: a,
            })
            .collect(),
    )
    .unwrap()
}

#[test]
fn scatter_elements() {
    let ages = [40.0, 50.0, 60.0];
    let preds = [45.0, 55.0, 50.0];
    let fit = fit_ols(&ages, &preds).unwrap();
    let svg = render_scatter(&predictions(&ages, &preds), &fit).unwrap();
    let doc = parse(&svg);
    assert_eq!(count(&doc, "circle", Some("point")), 3);
    assert_eq!(count(&doc, "line", None), 2);
    assert_eq!(count(&doc, "line", Some("ols")), 1);
    assert_eq!(count(&doc, "line", Some("identity")), 1);

    let single = render_scatter(&predictions(&[50.0], &[52.0]), &fit).unwrap();
    let doc = parse(&single);
    assert_eq!(count(&doc, "circle", Some("point")), 1);
    assert_eq!(count(&doc, "line", None), 2);

    let empty = PredictionTable { rows: vec![] };
    assert_eq!(render_scatter(&empty, &fit), Err(ReportError::EmptyTable));
}
