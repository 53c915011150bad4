//! Bounded worker pool that returns results in input order.

use std::sync::Mutex;

/// Applies `f` to every item on up to `jobs` threads. The output order
/// always matches the input order, whatever the worker count.
pub fn ordered_map<T, R, F>(items: Vec<T>, jobs: usize, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(usize, T) -> R + Sync,
{
    let n = items.len();
    let jobs = jobs.max(1).min(n.max(1));
    if jobs == 1 {
        return items.into_iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let queue = Mutex::new(items.into_iter().enumerate());
    let results: Mutex<Vec<Option<R>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let next = queue.lock().expect("work queue poisoned").next();
                let Some((i, item)) = next else { break };
                let r = f(i, item);
                results.lock().expect("result slots poisoned")[i] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .expect("result slots poisoned")
        .into_iter()
        .map(|r| r.expect("every slot is filled once all workers have joined"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved_for_any_worker_count() {
        let input: Vec<u64> = (0..200).collect();
        let expected: Vec<u64> = input.iter().map(|x| x * x).collect();
        for jobs in [0, 1, 3, 16] {
            let out = ordered_map(input.clone(), jobs, |_, x| {
                if x % 7 == 0 {
                    std::thread::yield_now();
                }
                x * x
            });
            assert_eq!(out, expected);
        }
    }
}
